//! Classical and SLD quantum Fisher information.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat};
use crate::measurement::Povm;
use crate::model::{StateModel, WeightMatrix};

/// Outcome probabilities below this are treated as zero.
pub const PROB_FLOOR: f64 = 1e-14;
/// Derivative traces below this are treated as zero for a zero-probability outcome.
pub const INFO_FLOOR: f64 = 1e-12;
/// Largest condition number of the CFIM accepted by [`objective`].
pub const MAX_CONDITION: f64 = 1e12;
/// Denominator floor for the SLD Lyapunov solve.
pub const SLD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FisherKind {
    Classical,
    Sld,
}

#[derive(Debug, Clone)]
pub struct FisherMatrix {
    pub j: RMat,
    pub kind: FisherKind,
}

impl FisherMatrix {
    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::eigh_real(&self.j).0
    }
}

/// Symmetric logarithmic derivatives, one per parameter.
#[derive(Debug, Clone)]
pub struct SldSet {
    pub operators: Vec<CMat>,
}

impl SldSet {
    /// Largest `|| d_i rho - (rho L_i + L_i rho) / 2 ||_F` over parameters.
    pub fn residual(&self, model: &StateModel) -> f64 {
        self.operators
            .iter()
            .zip(&model.drho)
            .map(|(l, dr)| {
                let sym = (&model.rho * l + l * &model.rho).scale(0.5);
                linalg::frobenius(&(dr - sym))
            })
            .fold(0.0, f64::max)
    }
}

fn check_dims(model: &StateModel, p: &Povm) -> Result<()> {
    if p.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: p.dim() });
    }
    Ok(())
}

/// Per-outcome probabilities `p_k` and derivative traces `d[i][k]`.
pub fn outcome_traces(model: &StateModel, p: &Povm) -> (Vec<f64>, Vec<Vec<f64>>) {
    let probs = p
        .elements
        .iter()
        .map(|e| linalg::trace_prod_re(&model.rho, e))
        .collect();
    let derivs = model
        .drho
        .iter()
        .map(|dr| p.elements.iter().map(|e| linalg::trace_prod_re(dr, e)).collect())
        .collect();
    (probs, derivs)
}

/// Classical Fisher matrix from precomputed traces, with the 0/0 convention.
pub fn cfim_from_traces(probs: &[f64], derivs: &[Vec<f64>]) -> Result<RMat> {
    let n = derivs.len();
    let mut j = RMat::zeros(n, n);
    for (k, &pk) in probs.iter().enumerate() {
        if pk < PROB_FLOOR {
            if derivs.iter().all(|d| d[k].abs() < INFO_FLOOR) {
                continue;
            }
            return Err(Error::SingularProbability { outcome: k, p: pk });
        }
        for a in 0..n {
            let da = derivs[a][k] / pk;
            for b in a..n {
                j[(a, b)] += da * derivs[b][k];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            j[(a, b)] = j[(b, a)];
        }
    }
    Ok(j)
}

/// `J_ij = sum_k Tr(d_i rho Pi_k) Tr(d_j rho Pi_k) / Tr(rho Pi_k)`.
pub fn cfim(model: &StateModel, p: &Povm) -> Result<FisherMatrix> {
    check_dims(model, p)?;
    let (probs, derivs) = outcome_traces(model, p);
    Ok(FisherMatrix { j: cfim_from_traces(&probs, &derivs)?, kind: FisherKind::Classical })
}

/// `Tr(W J^{-1})` through a Cholesky solve, refusing singular or
/// ill-conditioned `J`.
pub fn weighted_inverse_trace(j: &RMat, w: &WeightMatrix) -> Result<f64> {
    if w.dim() != j.nrows() {
        return Err(Error::DimensionMismatch { expected: j.nrows(), got: w.dim() });
    }
    let (vals, _) = linalg::eigh_real(j);
    let lo = vals.first().copied().unwrap_or(0.0);
    let hi = vals.last().copied().unwrap_or(0.0);
    if lo.is_nan() || lo <= 0.0 || hi / lo > MAX_CONDITION {
        return Err(Error::SingularCfim { eigenvalues: vals });
    }
    let chol = j
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularCfim { eigenvalues: vals.clone() })?;
    let x = chol.solve(w.matrix());
    Ok(x.trace())
}

/// The objective `Tr(W J(Pi)^{-1})`.
pub fn objective(model: &StateModel, p: &Povm, w: &WeightMatrix) -> Result<f64> {
    let j = cfim(model, p)?;
    weighted_inverse_trace(&j.j, w)
}

/// Solves `d_i rho = (rho L_i + L_i rho) / 2` in the eigenbasis of rho.
pub fn sld(model: &StateModel) -> Result<SldSet> {
    let (vals, vecs) = linalg::eigh(&model.rho);
    let d = model.dim();
    let vecs_h = vecs.adjoint();
    let mut operators = Vec::with_capacity(model.n_params());
    for (param, dr) in model.drho.iter().enumerate() {
        let local = &vecs_h * dr * &vecs;
        let mut l = CMat::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                let denom = vals[a].max(0.0) + vals[b].max(0.0);
                let num = local[(a, b)];
                if denom < SLD_FLOOR {
                    if num.norm() < SLD_FLOOR {
                        continue;
                    }
                    return Err(Error::NoSld { param, numerator: num.norm() });
                }
                l[(a, b)] = num * (2.0 / denom);
            }
        }
        operators.push(linalg::hermitize(&(&vecs * l * &vecs_h)));
    }
    Ok(SldSet { operators })
}

/// `[J_S]_ij = Tr[rho (L_i L_j + L_j L_i)] / 2`.
pub fn sld_qfi_from(model: &StateModel, slds: &SldSet) -> FisherMatrix {
    let n = slds.operators.len();
    let mut j = RMat::zeros(n, n);
    for a in 0..n {
        let rl = &model.rho * &slds.operators[a];
        for b in a..n {
            // Tr(rho L_a L_b) and its conjugate Tr(rho L_b L_a)
            let v = linalg::trace_prod(&rl, &slds.operators[b]).re;
            j[(a, b)] = v;
            j[(b, a)] = v;
        }
    }
    FisherMatrix { j, kind: FisherKind::Sld }
}

pub fn sld_qfi(model: &StateModel) -> Result<FisherMatrix> {
    let slds = sld(model)?;
    Ok(sld_qfi_from(model, &slds))
}

/// Per-outcome estimates of the locally unbiased estimator attaining
/// `J(Pi)^{-1}` at the model's point.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorTable {
    pub theta: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// `estimates[k][i]` is the estimate of parameter `i` on outcome `k`.
    pub estimates: Vec<Vec<f64>>,
}

impl EstimatorTable {
    /// `sum_k p_k (theta_hat(k) - theta)`; zero for an unbiased table.
    pub fn bias(&self) -> Vec<f64> {
        let n = self.theta.len();
        let mut out = vec![0.0; n];
        for (pk, est) in self.probabilities.iter().zip(&self.estimates) {
            for i in 0..n {
                out[i] += pk * (est[i] - self.theta[i]);
            }
        }
        out
    }

    /// `[sum_k theta_hat_i(k) Tr(d_j rho Pi_k)]_{ij}`; the identity for a
    /// locally unbiased table.
    pub fn derivative_matrix(&self, model: &StateModel, p: &Povm) -> RMat {
        let (_, derivs) = outcome_traces(model, p);
        let n = self.theta.len();
        RMat::from_fn(n, n, |i, j| {
            self.estimates
                .iter()
                .enumerate()
                .map(|(k, est)| est[i] * derivs[j][k])
                .sum()
        })
    }

    /// Mean-squared-error matrix at the model's point.
    pub fn mse(&self) -> RMat {
        let n = self.theta.len();
        RMat::from_fn(n, n, |i, j| {
            self.probabilities
                .iter()
                .zip(&self.estimates)
                .map(|(pk, est)| pk * (est[i] - self.theta[i]) * (est[j] - self.theta[j]))
                .sum()
        })
    }
}

/// `theta_hat_i(k) = theta_i + sum_j (J^{-1})_ij d_j log Tr(rho Pi_k)`.
pub fn locally_unbiased_estimator(model: &StateModel, p: &Povm) -> Result<EstimatorTable> {
    check_dims(model, p)?;
    let (probs, derivs) = outcome_traces(model, p);
    let j = cfim_from_traces(&probs, &derivs)?;
    let n = model.n_params();
    // singularity check shared with the objective
    weighted_inverse_trace(&j, &WeightMatrix::identity(n))?;
    let chol = j.cholesky().ok_or_else(|| Error::SingularCfim { eigenvalues: vec![] })?;
    let theta = if model.theta.len() == n { model.theta.clone() } else { vec![0.0; n] };
    let estimates = probs
        .iter()
        .enumerate()
        .map(|(k, &pk)| {
            if pk < PROB_FLOOR {
                return theta.clone();
            }
            let score = DVector::from_iterator(n, (0..n).map(|i| derivs[i][k] / pk));
            let shift = chol.solve(&score);
            (0..n).map(|i| theta[i] + shift[i]).collect()
        })
        .collect();
    Ok(EstimatorTable { theta, probabilities: probs, estimates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, frobenius, identity, pauli, C64, ONE, ZERO};
    use crate::measurement::{povm_from_kraus, random_kraus_init};
    use crate::model::{dephasing_model, qubit_bloch_model, tensor_power, ParameterPoint};
    use proptest::prelude::*;

    fn trine(phi1: f64) -> Povm {
        Povm::new(
            (0..3)
                .map(|k| {
                    let phi = phi1 + 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                    let z = C64::from_polar(1.0, phi);
                    CMat::from_row_slice(2, 2, &[ONE, z, z.conj(), ONE]).scale(1.0 / 3.0)
                })
                .collect(),
        )
    }

    fn tetrahedron() -> Povm {
        let s = 1.0 / 3f64.sqrt();
        let vs = [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
        Povm::new(
            vs.iter()
                .map(|v| {
                    (identity(2) + pauli(1).scale(v[0]) + pauli(2).scale(v[1]) + pauli(3).scale(v[2]))
                        .scale(0.25)
                })
                .collect(),
        )
    }

    fn origin(n: usize) -> StateModel {
        let active: Vec<usize> = (1..=n).collect();
        qubit_bloch_model(&ParameterPoint::new(vec![0.0; 3]), &active).unwrap()
    }

    /// Independent scalar triple loop over (k, i, j).
    fn brute_cfim(model: &StateModel, p: &Povm) -> RMat {
        let n = model.n_params();
        let d = model.dim();
        let tr = |a: &CMat, b: &CMat| -> f64 {
            let mut s = 0.0;
            for r in 0..d {
                for q in 0..d {
                    s += (a[(r, q)] * b[(q, r)]).re;
                }
            }
            s
        };
        let mut j = RMat::zeros(n, n);
        for e in &p.elements {
            let pk = tr(&model.rho, e);
            for a in 0..n {
                for b in 0..n {
                    j[(a, b)] += tr(&model.drho[a], e) * tr(&model.drho[b], e) / pk;
                }
            }
        }
        j
    }

    #[test]
    fn trine_at_origin_gives_half_identity() {
        let m = origin(2);
        let j = cfim(&m, &trine(0.3)).unwrap();
        assert!((&j.j - RMat::identity(2, 2) * 0.5).amax() < 1e-14);
        let f = objective(&m, &trine(0.3), &WeightMatrix::identity(2)).unwrap();
        assert!((f - 4.0).abs() < 1e-9);
    }

    #[test]
    fn sigma3_pvm_carries_no_information() {
        let m = origin(2);
        let pvm = Povm::new(vec![
            CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]),
            CMat::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, ONE]),
        ]);
        let j = cfim(&m, &pvm).unwrap();
        assert!(j.j.amax() < 1e-15);
        let err = objective(&m, &pvm, &WeightMatrix::identity(2)).unwrap_err();
        assert!(matches!(err, Error::SingularCfim { .. }));
    }

    #[test]
    fn tetrahedron_at_origin_gives_third_identity() {
        let m = origin(3);
        let j = cfim(&m, &tetrahedron()).unwrap();
        assert!((&j.j - RMat::identity(3, 3) / 3.0).amax() < 1e-14);
        let f = objective(&m, &tetrahedron(), &WeightMatrix::identity(3)).unwrap();
        assert!((f - 9.0).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_outcome_conventions() {
        let m = qubit_bloch_model(&ParameterPoint::new(vec![0.0, 0.0, 1.0]), &[1, 2]).unwrap();
        // |1><1| is orthogonal to the pure state |0><0| and the derivatives have no diagonal.
        let pvm = Povm::new(vec![
            CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]),
            CMat::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, ONE]),
        ]);
        assert!(cfim(&m, &pvm).unwrap().j.amax() < 1e-15);
        // |1><1| against a derivative that has weight there
        let mut m2 = m.clone();
        m2.drho[0] = CMat::from_row_slice(2, 2, &[c(0.5, 0.0), ZERO, ZERO, c(-0.5, 0.0)]);
        assert!(matches!(cfim(&m2, &pvm), Err(Error::SingularProbability { outcome: 1, .. })));
    }

    #[test]
    fn sld_at_origin_is_pauli() {
        let m = origin(2);
        let l = sld(&m).unwrap();
        assert!(frobenius(&(&l.operators[0] - pauli(1))) < 1e-14);
        assert!(frobenius(&(&l.operators[1] - pauli(2))) < 1e-14);
        let js = sld_qfi(&m).unwrap();
        assert!((&js.j - RMat::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn dephasing_sld_is_pauli_and_qfi_identity() {
        for eps in [0.05, 0.3, 0.5, 0.77, 0.95] {
            let m = dephasing_model(eps, [0.0, 0.0]).unwrap();
            let l = sld(&m).unwrap();
            assert!(l.residual(&m) < 1e-12);
            assert!(frobenius(&(&l.operators[0] - pauli(1))) < 1e-12);
            let js = sld_qfi(&m).unwrap();
            assert!((&js.j - RMat::identity(2, 2)).amax() < 1e-12, "eps {eps}");
        }
    }

    #[test]
    fn radial_sld_residual() {
        let m = qubit_bloch_model(&ParameterPoint::new(vec![0.6, 0.0]), &[1, 2]).unwrap();
        let l = sld(&m).unwrap();
        assert!(l.residual(&m) < 1e-9);
        // L_1 has a component along the identity (radial direction)
        assert!(linalg::trace(&l.operators[0]).norm() > 1e-3);
        let js = sld_qfi(&m).unwrap();
        assert!((js.j[(0, 0)] - 1.0 / (1.0 - 0.36)).abs() < 1e-12);
        assert!((js.j[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_state_sld_exists() {
        let m = qubit_bloch_model(&ParameterPoint::new(vec![0.0, 0.0, 1.0]), &[1, 2]).unwrap();
        let l = sld(&m).unwrap();
        assert!(l.residual(&m) < 1e-12);
    }

    #[test]
    fn no_sld_when_derivative_leaves_support() {
        let mut rho = CMat::zeros(3, 3);
        rho[(0, 0)] = ONE;
        let mut dr = CMat::zeros(3, 3);
        dr[(1, 2)] = c(0.5, 0.0);
        dr[(2, 1)] = c(0.5, 0.0);
        let m = StateModel::from_parts(rho, vec![dr], vec![0.0], "defective");
        assert!(matches!(sld(&m), Err(Error::NoSld { param: 0, .. })));
    }

    #[test]
    fn qfi_is_additive_over_copies() {
        let base = origin(2);
        for copies in [2usize, 3] {
            let t = tensor_power(&base, copies).unwrap();
            let js = sld_qfi(&t).unwrap();
            assert!((&js.j - RMat::identity(2, 2) * copies as f64).amax() < 1e-12);
        }
    }

    #[test]
    fn estimator_is_locally_unbiased() {
        let m = origin(2);
        let table = locally_unbiased_estimator(&m, &trine(0.0)).unwrap();
        for b in table.bias() {
            assert!(b.abs() < 1e-12);
        }
        let dm = table.derivative_matrix(&m, &trine(0.0));
        assert!((dm - RMat::identity(2, 2)).amax() < 1e-8);
        let trivial = Povm::new(vec![identity(2)]);
        assert!(matches!(
            locally_unbiased_estimator(&m, &trivial),
            Err(Error::SingularCfim { .. })
        ));
    }

    #[test]
    fn estimator_derivative_by_finite_differences() {
        // expectation of the estimator on rho(theta +- h e_j), a Bloch model is affine in theta
        let theta = [0.3, -0.2, 0.1];
        let m = qubit_bloch_model(&ParameterPoint::new(theta.to_vec()), &[1, 2, 3]).unwrap();
        let p = povm_from_kraus(&random_kraus_init(2, 5, 3).unwrap());
        let table = locally_unbiased_estimator(&m, &p).unwrap();
        let h = 1e-5;
        for j in 0..3 {
            let mut plus = theta;
            let mut minus = theta;
            plus[j] += h;
            minus[j] -= h;
            let mp = qubit_bloch_model(&ParameterPoint::new(plus.to_vec()), &[1, 2, 3]).unwrap();
            let mm = qubit_bloch_model(&ParameterPoint::new(minus.to_vec()), &[1, 2, 3]).unwrap();
            let (pp, _) = outcome_traces(&mp, &p);
            let (pm, _) = outcome_traces(&mm, &p);
            for i in 0..3 {
                let ep: f64 = table.estimates.iter().zip(&pp).map(|(e, q)| e[i] * q).sum();
                let em: f64 = table.estimates.iter().zip(&pm).map(|(e, q)| e[i] * q).sum();
                let deriv = (ep - em) / (2.0 * h);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((deriv - want).abs() < 1e-8, "i={i} j={j} deriv={deriv}");
            }
        }
        // MSE of this estimator attains J^{-1}
        let j = cfim(&m, &p).unwrap().j;
        let jinv = j.try_inverse().unwrap();
        assert!((table.mse() - jinv).amax() < 1e-10);
    }

    #[test]
    fn weighted_objective_uses_weight() {
        let m = origin(2);
        let w = WeightMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let f = objective(&m, &trine(0.0), &w).unwrap();
        assert!((f - 10.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn cfim_matches_brute_force_and_is_dominated_by_qfi(
            seed in any::<u64>(),
            k in 2usize..7,
            copies in 1usize..4,
            t1 in -0.5f64..0.5,
            t2 in -0.5f64..0.5,
            t3 in -0.5f64..0.5,
        ) {
            let base = qubit_bloch_model(&ParameterPoint::new(vec![t1, t2, t3]), &[1, 2, 3]).unwrap();
            let m = tensor_power(&base, copies).unwrap();
            let p = povm_from_kraus(&random_kraus_init(m.dim(), k, seed).unwrap());
            let j = cfim(&m, &p).unwrap().j;
            let brute = brute_cfim(&m, &p);
            prop_assert!((&j - &brute).amax() < 1e-12);
            let js = sld_qfi(&m).unwrap().j;
            let (vals, _) = linalg::eigh_real(&(js - &j));
            prop_assert!(vals[0] > -1e-8, "QFI - CFIM min eigenvalue {}", vals[0]);
        }

        #[test]
        fn objective_invariant_under_relabeling(seed in any::<u64>(), k in 3usize..7, shift in 1usize..6) {
            let m = origin(2);
            let p = povm_from_kraus(&random_kraus_init(2, k, seed).unwrap());
            let mut rotated = p.elements.clone();
            rotated.rotate_left(shift % k);
            let w = WeightMatrix::identity(2);
            let a = objective(&m, &p, &w).unwrap();
            let b = objective(&m, &Povm::new(rotated), &w).unwrap();
            prop_assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        }

        #[test]
        fn sld_residual_is_small(t1 in -0.6f64..0.6, t2 in -0.6f64..0.6, t3 in -0.5f64..0.5, copies in 1usize..4) {
            let base = qubit_bloch_model(&ParameterPoint::new(vec![t1, t2, t3]), &[1, 2, 3]).unwrap();
            let m = tensor_power(&base, copies).unwrap();
            let l = sld(&m).unwrap();
            prop_assert!(l.residual(&m) < 1e-9);
        }
    }
}
