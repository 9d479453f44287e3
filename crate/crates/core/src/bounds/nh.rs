//! The Nagaoka-Hayashi bound as a semidefinite program.
//!
//! ```text
//! min Tr[(W (x) rho) LL]   s.t.   [[LL, X], [X^dagger, I]] >= 0,
//!                                 Tr(rho X_j) = 0,  Tr(d_k rho X_j) = delta_jk
//! ```
//!
//! `LL` is an n x n block matrix of Hermitian d x d blocks with
//! `LL_jk = LL_kj`, parameterized by its `j <= k` blocks. The affine
//! constraints on each `X_j` are eliminated with a particular solution plus a
//! basis of their common null space, so the program becomes an LMI in free
//! real variables and is handed to [`super::sdp`] in its dual form.

use nalgebra::DVector;

use super::sdp::{self, SdpProblem, SdpSettings, SparseHermitian};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat, C64};
use crate::model::{StateModel, WeightMatrix};

/// Largest LMI size `(n+1) d` accepted.
pub const MAX_LMI_SIZE: usize = 128;

/// The LMI `F(y) = F0 + sum_i y_i F_i >= 0` with objective `c^T y`.
#[derive(Debug, Clone)]
pub struct NhSdpProblem {
    pub d: usize,
    pub n: usize,
    /// `W (x) rho`.
    pub big_s: CMat,
    /// Particular solutions of the constraints on `X_j`.
    pub x0: Vec<CMat>,
    /// Hermitian basis of the constraint null space.
    pub null_basis: Vec<CMat>,
    pub f0: CMat,
    pub f: Vec<SparseHermitian>,
    pub c: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct NhSolution {
    pub value: f64,
    pub gap: f64,
    pub iterations: usize,
    /// Optimal `X_j`.
    pub x: Vec<CMat>,
    /// Optimal `LL` as a dense `nd x nd` matrix.
    pub big_l: CMat,
    pub log: Vec<sdp::SdpIterate>,
}

impl NhSdpProblem {
    pub fn new(model: &StateModel, w: &WeightMatrix) -> Result<Self> {
        let d = model.dim();
        let n = model.n_params();
        if w.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: w.dim() });
        }
        let size = (n + 1) * d;
        if size > MAX_LMI_SIZE {
            return Err(Error::Resource { dim: size, cap: MAX_LMI_SIZE });
        }
        let basis = linalg::hermitian_basis(d);
        let dd = d * d;

        // rows: rho, d_1 rho, ..., d_n rho in Hermitian coordinates
        let mut cons = RMat::zeros(n + 1, dd);
        cons.row_mut(0).copy_from(&linalg::hermitian_coords(&model.rho).transpose());
        for (k, dr) in model.drho.iter().enumerate() {
            cons.row_mut(k + 1).copy_from(&linalg::hermitian_coords(dr).transpose());
        }
        let gram = &cons * cons.transpose();
        let gram_inv = linalg::spd_inverse(&gram)
            .ok_or_else(|| Error::InvalidState("derivatives are linearly dependent on the state".into()))?;
        let pinv = cons.transpose() * &gram_inv;
        let x0: Vec<CMat> = (0..n)
            .map(|j| linalg::hermitian_from_coords(pinv.column(j + 1).as_slice(), d))
            .collect();
        let projector = RMat::identity(dd, dd) - &pinv * &cons;
        let (vals, vecs) = linalg::eigh_real(&projector);
        let null_basis: Vec<CMat> = vals
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.5)
            .map(|(i, _)| linalg::hermitian_from_coords(vecs.column(i).as_slice(), d))
            .collect();

        let big_s = linalg::kron(&w.matrix().map(|x| C64::new(x, 0.0)), &model.rho);
        let mut f = Vec::new();
        let mut c = Vec::new();
        for j in 0..n {
            for k in j..n {
                for e in &basis {
                    let mut fi = SparseHermitian::new(size);
                    place(&mut fi, e, j * d, k * d);
                    if j != k {
                        place(&mut fi, e, k * d, j * d);
                    }
                    let weight = if j == k { w.matrix()[(j, j)] } else { 2.0 * w.matrix()[(j, k)] };
                    c.push(weight * linalg::trace_prod_re(&model.rho, e));
                    f.push(fi);
                }
            }
        }
        for j in 0..n {
            for v in &null_basis {
                let mut fi = SparseHermitian::new(size);
                place(&mut fi, v, j * d, n * d);
                place(&mut fi, v, n * d, j * d);
                f.push(fi);
                c.push(0.0);
            }
        }
        let mut f0 = CMat::zeros(size, size);
        for (j, xj) in x0.iter().enumerate() {
            f0.view_mut((j * d, n * d), (d, d)).copy_from(xj);
            f0.view_mut((n * d, j * d), (d, d)).copy_from(xj);
        }
        f0.view_mut((n * d, n * d), (d, d)).copy_from(&linalg::identity(d));

        Ok(Self { d, n, big_s, x0, null_basis, f0, f, c: DVector::from_vec(c) })
    }

    pub fn n_variables(&self) -> usize {
        self.f.len()
    }

    /// `F(y)`.
    pub fn lmi(&self, y: &DVector<f64>) -> CMat {
        let mut m = self.f0.clone();
        for (fi, &yi) in self.f.iter().zip(y.iter()) {
            fi.add_to(&mut m, yi);
        }
        m
    }

    /// The operators `X_j` encoded by `y`.
    pub fn x_operators(&self, y: &DVector<f64>) -> Vec<CMat> {
        let offset = self.n * (self.n + 1) / 2 * self.d * self.d;
        let per = self.null_basis.len();
        (0..self.n)
            .map(|j| {
                let mut x = self.x0[j].clone();
                for (b, v) in self.null_basis.iter().enumerate() {
                    x += v.scale(y[offset + j * per + b]);
                }
                x
            })
            .collect()
    }

    pub fn as_sdp(&self) -> SdpProblem {
        let a = self
            .f
            .iter()
            .map(|fi| SparseHermitian {
                size: fi.size,
                entries: fi.entries.iter().map(|&(p, q, v)| (p, q, -v)).collect(),
            })
            .collect();
        SdpProblem { c: self.f0.clone(), a, b: -&self.c }
    }

    pub fn solve(&self, settings: &SdpSettings) -> Result<NhSolution> {
        let sol = sdp::solve(&self.as_sdp(), settings)?;
        let nd = self.n * self.d;
        let lmi = self.lmi(&sol.y);
        Ok(NhSolution {
            value: self.c.dot(&sol.y),
            gap: sol.gap,
            iterations: sol.iterations,
            x: self.x_operators(&sol.y),
            big_l: lmi.view((0, 0), (nd, nd)).into_owned(),
            log: sol.log,
        })
    }
}

fn place(target: &mut SparseHermitian, block: &CMat, row: usize, col: usize) {
    for q in 0..block.ncols() {
        for p in 0..block.nrows() {
            let v = block[(p, q)];
            if v.norm() > 1e-15 {
                target.push(row + p, col + q, v);
            }
        }
    }
}

/// Nagaoka-Hayashi bound with the default solver settings.
pub fn nh_solve(model: &StateModel, w: &WeightMatrix) -> Result<NhSolution> {
    NhSdpProblem::new(model, w)?.solve(&SdpSettings::default())
}

/// Value and duality gap of the Nagaoka-Hayashi bound.
pub fn nh_bound(model: &StateModel, w: &WeightMatrix) -> Result<(f64, f64)> {
    let sol = nh_solve(model, w)?;
    Ok((sol.value, sol.gap))
}

/// The two-parameter Nagaoka function
/// `Tr(rho X_1 X_1) + Tr(rho X_2 X_2) + TrAbs(sqrt(rho) [X_1, X_2] sqrt(rho))`.
pub fn nagaoka_value(model: &StateModel, x: &[CMat]) -> Result<f64> {
    if x.len() != 2 {
        return Err(Error::NotApplicable("the Nagaoka function takes exactly two operators".into()));
    }
    let sr = linalg::psd_sqrt(&model.rho);
    let comm = &x[0] * &x[1] - &x[1] * &x[0];
    let diag: f64 = x.iter().map(|xi| linalg::trace_prod_re(&model.rho, &(xi * xi))).sum();
    Ok(diag + linalg::trace_norm(&(&sr * comm * &sr)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{dephasing_model, qubit_bloch_model, tensor_power, ParameterPoint};

    fn origin(n: usize) -> StateModel {
        let active: Vec<usize> = (1..=n).collect();
        qubit_bloch_model(&ParameterPoint::new(vec![0.0; 3]), &active).unwrap()
    }

    #[test]
    fn particular_solutions_satisfy_constraints() {
        let m = qubit_bloch_model(&ParameterPoint::new(vec![0.3, -0.1, 0.2]), &[1, 2, 3]).unwrap();
        let p = NhSdpProblem::new(&m, &WeightMatrix::identity(3)).unwrap();
        assert_eq!(p.null_basis.len(), 0);
        for (j, x) in p.x0.iter().enumerate() {
            assert!(linalg::trace_prod_re(&m.rho, x).abs() < 1e-12);
            for (k, dr) in m.drho.iter().enumerate() {
                let expected = if j == k { 1.0 } else { 0.0 };
                assert!((linalg::trace_prod_re(dr, x) - expected).abs() < 1e-12);
            }
        }
        let m2 = tensor_power(&origin(2), 2).unwrap();
        let p2 = NhSdpProblem::new(&m2, &WeightMatrix::identity(2)).unwrap();
        assert_eq!(p2.null_basis.len(), 16 - 3);
        for v in &p2.null_basis {
            assert!(linalg::trace_prod_re(&m2.rho, v).abs() < 1e-12);
            for dr in &m2.drho {
                assert!(linalg::trace_prod_re(dr, v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lmi_blocks_are_symmetric() {
        let m = origin(2);
        let p = NhSdpProblem::new(&m, &WeightMatrix::identity(2)).unwrap();
        let y = DVector::from_fn(p.n_variables(), |i, _| (i as f64 * 0.37).sin());
        let f = p.lmi(&y);
        assert!(linalg::hermiticity_defect(&f) < 1e-14);
        let d = p.d;
        let b01 = f.view((0, d), (d, d)).into_owned();
        let b10 = f.view((d, 0), (d, d)).into_owned();
        assert!(linalg::frobenius(&(b01 - b10)) < 1e-14);
    }

    #[test]
    fn origin_two_parameter() {
        let sol = nh_solve(&origin(2), &WeightMatrix::identity(2)).unwrap();
        assert!((sol.value - 4.0).abs() < 1e-6, "{}", sol.value);
        assert!(sol.gap < 1e-7);
    }

    #[test]
    fn origin_three_parameter() {
        let sol = nh_solve(&origin(3), &WeightMatrix::identity(3)).unwrap();
        assert!((sol.value - 9.0).abs() < 1e-6, "{}", sol.value);
        assert!(sol.gap < 1e-7);
    }

    #[test]
    fn two_copies() {
        let m = tensor_power(&origin(2), 2).unwrap();
        let sol = nh_solve(&m, &WeightMatrix::identity(2)).unwrap();
        assert!((sol.value - 1.5).abs() < 1e-6, "{}", sol.value);
        assert!(sol.gap < 1e-7);
    }

    #[test]
    fn weighted_qubit_matches_closed_form() {
        let m = origin(2);
        let w = WeightMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let (value, _) = nh_bound(&m, &w).unwrap();
        assert!((value - 9.0).abs() < 1e-6, "{value}");
    }

    #[test]
    fn agrees_with_nagaoka_function() {
        for m in [origin(2), dephasing_model(0.3, [0.0, 0.0]).unwrap()] {
            let sol = nh_solve(&m, &WeightMatrix::identity(2)).unwrap();
            let nag = nagaoka_value(&m, &sol.x).unwrap();
            assert!((nag - sol.value).abs() < 1e-6, "{} vs {}", nag, sol.value);
        }
    }

    #[test]
    fn invariant_under_unitary_change_of_basis() {
        let m = qubit_bloch_model(&ParameterPoint::new(vec![0.4, 0.1, 0.0]), &[1, 2]).unwrap();
        let u = {
            let h = linalg::pauli(1).scale(0.3) + linalg::pauli(3).scale(0.7);
            let (vals, vecs) = linalg::eigh(&h);
            let phases = CMat::from_diagonal(&DVector::from_iterator(
                2,
                vals.iter().map(|&v| C64::from_polar(1.0, v)),
            ));
            &vecs * phases * vecs.adjoint()
        };
        let w = WeightMatrix::identity(2);
        let (a, _) = nh_bound(&m, &w).unwrap();
        let (b, _) = nh_bound(&m.conjugated(&u), &w).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn rejects_oversized_problems() {
        let m = tensor_power(&origin(2), 6).unwrap();
        assert!(matches!(
            NhSdpProblem::new(&m, &WeightMatrix::identity(2)),
            Err(Error::Resource { .. })
        ));
    }
}
