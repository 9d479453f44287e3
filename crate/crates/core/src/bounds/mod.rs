//! Lower bounds on the weighted mean-square error.

pub mod nh;
pub mod sdp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{self, INFO_FLOOR};
use crate::linalg::{self, RMat};
use crate::measurement::Povm;
use crate::model::{StateModel, WeightMatrix};

pub use nh::{nagaoka_value, nh_bound, nh_solve, NhSdpProblem, NhSolution};

/// The SLD Fisher matrix, refusing a singular one.
fn invertible_qfi(model: &StateModel) -> Result<RMat> {
    let js = fisher::sld_qfi(model)?.j;
    let (vals, vecs) = linalg::eigh_real(&js);
    let hi = vals.last().copied().unwrap_or(0.0).max(1.0);
    if vals[0] < INFO_FLOOR * hi {
        return Err(Error::SingularQfi { null_direction: vecs.column(0).iter().copied().collect() });
    }
    Ok(js)
}

/// `Tr(W J_S^{-1})`.
pub fn sld_bound(model: &StateModel, w: &WeightMatrix) -> Result<f64> {
    let js = invertible_qfi(model)?;
    fisher::weighted_inverse_trace(&js, w)
}

/// True for qubit models and their tensor powers.
fn is_qubit_family(model: &StateModel) -> bool {
    u32::try_from(model.copies)
        .ok()
        .and_then(|m| 2usize.checked_pow(m))
        .is_some_and(|d| d == model.dim())
}

/// Holevo function evaluated at `X_i = sum_j (J_S^{-1})_ij L_j`:
/// `Tr(W Re Z) + TrAbs(sqrt(W) Im Z sqrt(W))` with `Z_jk = Tr(rho X_k X_j)`.
///
/// This is the Holevo bound when the model is D-invariant.
pub fn holevo_dinv(model: &StateModel, w: &WeightMatrix) -> Result<f64> {
    if !is_qubit_family(model) {
        return Err(Error::NotApplicable(format!(
            "closed-form Holevo bound needs a qubit model or tensor power (dimension {}, {} copies)",
            model.dim(),
            model.copies
        )));
    }
    let slds = fisher::sld(model)?;
    let js = invertible_qfi(model)?;
    let js_inv = linalg::spd_inverse(&js).ok_or_else(|| Error::SingularQfi { null_direction: vec![] })?;
    let n = model.n_params();
    let d = model.dim();
    let xs: Vec<_> = (0..n)
        .map(|i| {
            slds.operators
                .iter()
                .enumerate()
                .fold(linalg::CMat::zeros(d, d), |acc, (j, l)| acc + l.scale(js_inv[(i, j)]))
        })
        .collect();
    let mut re = RMat::zeros(n, n);
    let mut im = RMat::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            let z = linalg::trace(&(&model.rho * &xs[k] * &xs[j]));
            re[(j, k)] = z.re;
            im[(j, k)] = z.im;
        }
    }
    let sw = linalg::real_sqrt_psd(w.matrix());
    Ok((w.matrix() * re).trace() + linalg::trace_norm_real(&(&sw * im * &sw)))
}

/// `R = sqrt(J_S^{-1/2} W J_S^{-1/2})` and `sqrt(J_S)` for a qubit model.
fn qubit_r(model: &StateModel, w: &WeightMatrix) -> Result<(RMat, RMat)> {
    if model.dim() != 2 {
        return Err(Error::NotApplicable(format!("qubit formula applied to dimension {}", model.dim())));
    }
    let js = invertible_qfi(model)?;
    let inv_sqrt = linalg::real_spectral_map(&js, |v| 1.0 / v.sqrt());
    let r = linalg::real_sqrt_psd(&(&inv_sqrt * w.matrix() * &inv_sqrt));
    Ok((r, linalg::real_sqrt_psd(&js)))
}

/// Minimum of `Tr(W J(Pi)^{-1})` over all POVMs on a qubit: `(Tr R)^2`.
pub fn qubit_optimal_value(model: &StateModel, w: &WeightMatrix) -> Result<f64> {
    let (r, _) = qubit_r(model, w)?;
    Ok(r.trace().powi(2))
}

/// The Fisher matrix an optimal qubit POVM must have: `sqrt(J_S) R sqrt(J_S) / Tr R`.
pub fn qubit_optimal_cfim(model: &StateModel, w: &WeightMatrix) -> Result<RMat> {
    let (r, sj) = qubit_r(model, w)?;
    let tr = r.trace();
    Ok(&sj * r * &sj / tr)
}

/// `||J(Pi) - sqrt(J_S) R sqrt(J_S) / Tr R||_F`; zero exactly for optimal POVMs.
pub fn check_optimality(model: &StateModel, p: &Povm, w: &WeightMatrix) -> Result<f64> {
    let target = qubit_optimal_cfim(model, w)?;
    let j = fisher::cfim(model, p)?.j;
    Ok(linalg::frobenius_real(&(j - target)))
}

/// Which bounds to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundSelection {
    pub holevo: bool,
    pub nh: bool,
}

impl Default for BoundSelection {
    fn default() -> Self {
        Self { holevo: true, nh: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub sld_value: f64,
    pub holevo_value: Option<f64>,
    pub nh_value: Option<f64>,
    pub nh_gap: Option<f64>,
    pub diagnostics: String,
}

impl BoundReport {
    /// Largest violation of `sld <= holevo <= nh` (zero when ordered).
    pub fn ordering_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        if let Some(h) = self.holevo_value {
            worst = worst.max(self.sld_value - h);
            if let Some(nh) = self.nh_value {
                worst = worst.max(h - nh);
            }
        }
        if let Some(nh) = self.nh_value {
            worst = worst.max(self.sld_value - nh);
        }
        worst
    }
}

/// Computes the selected bounds. The SLD bound is always included; the others
/// are left empty with a note when they do not apply or fail to certify.
pub fn bound_report(model: &StateModel, w: &WeightMatrix, select: BoundSelection) -> Result<BoundReport> {
    let sld_value = sld_bound(model, w)?;
    let mut notes = Vec::new();
    let holevo_value = if select.holevo {
        match holevo_dinv(model, w) {
            Ok(v) => Some(v),
            Err(e @ Error::NotApplicable(_)) => {
                notes.push(format!("holevo: {e}"));
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let (nh_value, nh_gap) = if select.nh {
        match nh_solve(model, w) {
            Ok(sol) => {
                notes.push(format!("nh: {} interior-point iterations", sol.iterations));
                (Some(sol.value), Some(sol.gap))
            }
            Err(e @ (Error::NoCertificate { .. } | Error::Resource { .. })) => {
                notes.push(format!("nh: {e}"));
                (None, None)
            }
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };
    Ok(BoundReport { sld_value, holevo_value, nh_value, nh_gap, diagnostics: notes.join("; ") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, pauli, CMat, ONE};
    use crate::model::{dephasing_model, qubit_bloch_model, tensor_power, ParameterPoint};

    fn origin(n: usize) -> StateModel {
        let active: Vec<usize> = (1..=n).collect();
        qubit_bloch_model(&ParameterPoint::new(vec![0.0; 3]), &active).unwrap()
    }

    fn trine() -> Povm {
        Povm::new(
            (0..3)
                .map(|k| {
                    let z = linalg::C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / 3.0);
                    CMat::from_row_slice(2, 2, &[ONE, z, z.conj(), ONE]).scale(1.0 / 3.0)
                })
                .collect(),
        )
    }

    #[test]
    fn sld_bound_examples() {
        assert!((sld_bound(&origin(2), &WeightMatrix::identity(2)).unwrap() - 2.0).abs() < 1e-12);
        assert!((sld_bound(&origin(3), &WeightMatrix::identity(3)).unwrap() - 3.0).abs() < 1e-12);
        for m in 2..=5 {
            let tp = tensor_power(&origin(2), m).unwrap();
            let v = sld_bound(&tp, &WeightMatrix::identity(2)).unwrap();
            assert!((v - 2.0 / m as f64).abs() < 1e-10, "M={m}: {v}");
        }
    }

    #[test]
    fn singular_qfi_names_null_direction() {
        // the same derivative twice
        let base = origin(1);
        let m = StateModel::from_parts(base.rho.clone(), vec![base.drho[0].clone(), base.drho[0].clone()], vec![0.0, 0.0], "dup");
        match sld_bound(&m, &WeightMatrix::identity(2)) {
            Err(Error::SingularQfi { null_direction }) => {
                assert!((null_direction[0] + null_direction[1]).abs() < 1e-8);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn holevo_examples() {
        let v2 = holevo_dinv(&origin(2), &WeightMatrix::identity(2)).unwrap();
        assert!((v2 - 2.0).abs() < 1e-12);
        let v3 = holevo_dinv(&origin(3), &WeightMatrix::identity(3)).unwrap();
        assert!((v3 - 3.0).abs() < 1e-12);
        for eps in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let m = dephasing_model(eps, [0.0, 0.0]).unwrap();
            let v = holevo_dinv(&m, &WeightMatrix::identity(2)).unwrap();
            let expected = 2.0 + 2.0 * (2.0 * eps - 1.0_f64).abs();
            assert!((v - expected).abs() < 1e-10, "eps {eps}: {v}");
        }
    }

    #[test]
    fn holevo_is_additive() {
        for base in [origin(2), dephasing_model(0.3, [0.0, 0.0]).unwrap()] {
            let one = holevo_dinv(&base, &WeightMatrix::identity(2)).unwrap();
            for m in [2, 3] {
                let v = holevo_dinv(&tensor_power(&base, m).unwrap(), &WeightMatrix::identity(2)).unwrap();
                assert!((v - one / m as f64).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn holevo_rejects_other_dimensions() {
        let rho = CMat::identity(3, 3).scale(1.0 / 3.0);
        let mut dr = CMat::zeros(3, 3);
        dr[(0, 0)] = c(0.1, 0.0);
        dr[(1, 1)] = c(-0.1, 0.0);
        let m = StateModel::from_parts(rho, vec![dr], vec![0.0], "qutrit");
        assert!(matches!(holevo_dinv(&m, &WeightMatrix::identity(1)), Err(Error::NotApplicable(_))));
        let report = bound_report(&m, &WeightMatrix::identity(1), BoundSelection { holevo: true, nh: false }).unwrap();
        assert!(report.holevo_value.is_none());
        assert!(report.diagnostics.contains("holevo"));
    }

    #[test]
    fn qubit_optimum_examples() {
        assert!((qubit_optimal_value(&origin(2), &WeightMatrix::identity(2)).unwrap() - 4.0).abs() < 1e-12);
        assert!((qubit_optimal_value(&origin(3), &WeightMatrix::identity(3)).unwrap() - 9.0).abs() < 1e-12);
        let w = WeightMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert!((qubit_optimal_value(&origin(2), &w).unwrap() - 9.0).abs() < 1e-12);
        let two = tensor_power(&origin(2), 2).unwrap();
        assert!(matches!(qubit_optimal_value(&two, &WeightMatrix::identity(2)), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn optimality_residuals() {
        let m = origin(2);
        let w = WeightMatrix::identity(2);
        assert!(check_optimality(&m, &trine(), &w).unwrap() < 1e-10);
        let pvm = Povm::new(vec![(CMat::identity(2, 2) + pauli(3)).scale(0.5), (CMat::identity(2, 2) - pauli(3)).scale(0.5)]);
        let target = linalg::frobenius_real(&qubit_optimal_cfim(&m, &w).unwrap());
        let r = check_optimality(&m, &pvm, &w).unwrap();
        assert!((r - target).abs() < 1e-12 && r > 0.5);
    }

    #[test]
    fn ordering_chain() {
        let models = vec![
            (origin(2), trine()),
            (qubit_bloch_model(&ParameterPoint::new(vec![0.5, 0.0, 0.0]), &[1, 2]).unwrap(), trine()),
            (qubit_bloch_model(&ParameterPoint::new(vec![0.2, 0.3, 0.1]), &[1, 2]).unwrap(), trine()),
            (dephasing_model(0.2, [0.0, 0.0]).unwrap(), trine()),
        ];
        for (m, p) in models {
            let w = WeightMatrix::identity(2);
            let report = bound_report(&m, &w, BoundSelection::default()).unwrap();
            assert!(report.ordering_violation() < 1e-6, "{}: {report:?}", m.label);
            let obj = fisher::objective(&m, &p, &w).unwrap();
            assert!(report.nh_value.unwrap() <= obj + 1e-6);
            let json = serde_json::to_string(&report).unwrap();
            let back: BoundReport = serde_json::from_str(&json).unwrap();
            assert_eq!(back, report);
        }
    }

    #[test]
    fn two_copy_bounds() {
        let m = tensor_power(&origin(2), 2).unwrap();
        let r = bound_report(&m, &WeightMatrix::identity(2), BoundSelection::default()).unwrap();
        assert!((r.sld_value - 1.0).abs() < 1e-10);
        assert!((r.holevo_value.unwrap() - 1.0).abs() < 1e-10);
        assert!((r.nh_value.unwrap() - 1.5).abs() < 1e-6);
        assert!(r.nh_gap.unwrap() < 1e-7);
    }
}
