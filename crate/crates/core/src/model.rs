//! Parametric qubit models evaluated at a fixed parameter point.
//!
//! A [`StateModel`] holds the density matrix and its partial derivatives with
//! respect to the *estimated* parameters. Parameters that are known (for
//! example the dephasing coordinate `theta_3 = 2 eps - 1`) enter `rho` but
//! have no derivative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, hermiticity_defect, kron, pauli, CMat};

/// Default cap on the Hilbert space dimension of a constructed model.
pub const DEFAULT_DIM_CAP: usize = 128;

/// Environment variable overriding [`DEFAULT_DIM_CAP`].
pub const DIM_CAP_ENV: &str = "QEST_DIM_CAP";

/// The dimension cap in effect: `QEST_DIM_CAP` if set and parseable, else 128.
pub fn dim_cap() -> usize {
    std::env::var(DIM_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_DIM_CAP)
}

/// A point in parameter space (Bloch coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    pub theta: Vec<f64>,
}

impl ParameterPoint {
    pub fn new(theta: impl Into<Vec<f64>>) -> Self {
        Self { theta: theta.into() }
    }

    pub fn norm(&self) -> f64 {
        self.theta.iter().map(|t| t * t).sum::<f64>().sqrt()
    }
}

/// Positive-definite weight matrix for the scalar objective `Tr(W J^{-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: linalg::RMat,
}

impl WeightMatrix {
    pub fn identity(n: usize) -> Self {
        Self { w: linalg::RMat::identity(n, n) }
    }

    pub fn new(w: linalg::RMat) -> Result<Self> {
        if w.nrows() != w.ncols() {
            return Err(Error::InvalidConfig("weight matrix must be square".into()));
        }
        let asym = (&w - w.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::InvalidConfig(format!("weight matrix not symmetric ({asym:e})")));
        }
        let (vals, _) = linalg::eigh_real(&w);
        if vals.first().copied().unwrap_or(0.0) <= 0.0 {
            return Err(Error::InvalidConfig("weight matrix must be positive definite".into()));
        }
        Ok(Self { w })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidConfig("weight matrix rows must have equal length".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(linalg::RMat::from_row_slice(n, n, &flat))
    }

    pub fn matrix(&self) -> &linalg::RMat {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_identity(&self) -> bool {
        (&self.w - linalg::RMat::identity(self.dim(), self.dim())).amax() == 0.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.w[(i, j)]).collect())
            .collect()
    }
}

/// A density matrix with its derivatives at a fixed parameter point.
#[derive(Debug, Clone)]
pub struct StateModel {
    pub rho: CMat,
    pub drho: Vec<CMat>,
    /// Values of the estimated parameters at this point, in the order of `drho`.
    pub theta: Vec<f64>,
    pub label: String,
    /// Number of tensor copies (1 for a base model).
    pub copies: usize,
}

impl StateModel {
    /// Wraps raw matrices without validation; see [`StateModel::validate`].
    pub fn from_parts(rho: CMat, drho: Vec<CMat>, theta: Vec<f64>, label: impl Into<String>) -> Self {
        Self { rho, drho, theta, label: label.into(), copies: 1 }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.drho.len()
    }

    /// Checks every model invariant and reports the worst deviations.
    pub fn validate(&self) -> ValidationReport {
        let d = self.dim();
        let mut violations = Vec::new();
        let hermiticity = hermiticity_defect(&self.rho);
        if hermiticity > 1e-12 {
            violations.push(format!("rho not Hermitian ({hermiticity:e})"));
        }
        let trace_deviation = (linalg::trace(&self.rho) - c(1.0, 0.0)).norm();
        if trace_deviation > 1e-12 {
            violations.push(format!("trace deviates from 1 by {trace_deviation:e}"));
        }
        let min_eigenvalue = linalg::min_eigenvalue(&self.rho);
        if min_eigenvalue < -1e-10 {
            violations.push(format!("rho has negative eigenvalue {min_eigenvalue:e}"));
        }
        let mut derivative_hermiticity = Vec::new();
        let mut derivative_trace = Vec::new();
        for (i, dr) in self.drho.iter().enumerate() {
            if dr.nrows() != d || dr.ncols() != d {
                violations.push(format!("drho[{i}] has shape {}x{}", dr.nrows(), dr.ncols()));
                derivative_hermiticity.push(f64::NAN);
                derivative_trace.push(f64::NAN);
                continue;
            }
            let h = hermiticity_defect(dr);
            let t = linalg::trace(dr).norm();
            if h > 1e-12 {
                violations.push(format!("drho[{i}] not Hermitian ({h:e})"));
            }
            if t > 1e-12 {
                violations.push(format!("drho[{i}] has trace {t:e}"));
            }
            derivative_hermiticity.push(h);
            derivative_trace.push(t);
        }
        ValidationReport {
            dim: d,
            hermiticity,
            trace_deviation,
            min_eigenvalue,
            derivative_hermiticity,
            derivative_trace,
            violations,
        }
    }

    /// Applies `rho -> U rho U^dagger` to the state and every derivative.
    pub fn conjugated(&self, u: &CMat) -> StateModel {
        let ud = u.adjoint();
        StateModel {
            rho: linalg::hermitize(&(u * &self.rho * &ud)),
            drho: self.drho.iter().map(|d| linalg::hermitize(&(u * d * &ud))).collect(),
            theta: self.theta.clone(),
            label: format!("{} (rotated)", self.label),
            copies: self.copies,
        }
    }

    /// Bloch vector of a single-qubit state, `None` for d != 2.
    pub fn bloch_vector(&self) -> Option<[f64; 3]> {
        if self.dim() != 2 {
            return None;
        }
        let mut v = [0.0; 3];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = linalg::trace_prod_re(&self.rho, &pauli(i + 1));
        }
        Some(v)
    }
}

/// Outcome of [`StateModel::validate`]; never an error.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub dim: usize,
    pub hermiticity: f64,
    pub trace_deviation: f64,
    pub min_eigenvalue: f64,
    pub derivative_hermiticity: Vec<f64>,
    pub derivative_trace: Vec<f64>,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `rho = (I + sum_i theta_i sigma_i) / 2` with derivatives `sigma_i / 2` for
/// each 1-based index in `active`.
pub fn qubit_bloch_model(theta: &ParameterPoint, active: &[usize]) -> Result<StateModel> {
    if theta.theta.len() > 3 {
        return Err(Error::InvalidState(format!(
            "a qubit Bloch vector has at most 3 components, got {}",
            theta.theta.len()
        )));
    }
    let norm = theta.norm();
    if norm > 1.0 + 1e-12 {
        return Err(Error::InvalidState(format!("Bloch vector norm {norm} exceeds 1")));
    }
    if active.is_empty() {
        return Err(Error::InvalidState("no active parameters".into()));
    }
    let mut sorted = active.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != active.len() || sorted.iter().any(|&i| !(1..=3).contains(&i)) {
        return Err(Error::InvalidState(format!("active set {active:?} must be distinct indices in 1..=3")));
    }
    let mut full = [0.0; 3];
    full[..theta.theta.len()].copy_from_slice(&theta.theta);

    let mut rho = linalg::identity(2);
    for (i, &t) in full.iter().enumerate() {
        rho += pauli(i + 1).scale(t);
    }
    rho = rho.scale(0.5);
    let drho = sorted.iter().map(|&i| pauli(i).scale(0.5)).collect();
    let label = format!(
        "bloch theta=({}, {}, {}) active={:?}",
        full[0], full[1], full[2], sorted
    );
    let values = sorted.iter().map(|&i| full[i - 1]).collect();
    Ok(StateModel::from_parts(rho, drho, values, label))
}

/// Dephasing family: `theta_3 = 2 eps - 1` known, `(theta_1, theta_2)` estimated.
pub fn dephasing_model(epsilon: f64, theta12: [f64; 2]) -> Result<StateModel> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidState(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let point = ParameterPoint::new(vec![theta12[0], theta12[1], 2.0 * epsilon - 1.0]);
    let mut m = qubit_bloch_model(&point, &[1, 2])?;
    m.label = format!("dephasing eps={epsilon} theta=({}, {})", theta12[0], theta12[1]);
    Ok(m)
}

/// `rho^{(x)M}` with Leibniz-rule derivatives, subject to [`dim_cap`].
pub fn tensor_power(base: &StateModel, copies: usize) -> Result<StateModel> {
    tensor_power_with_cap(base, copies, dim_cap())
}

pub fn tensor_power_with_cap(base: &StateModel, copies: usize, cap: usize) -> Result<StateModel> {
    if copies == 0 {
        return Err(Error::InvalidState("number of copies must be at least 1".into()));
    }
    let d = base.dim();
    let dim = d
        .checked_pow(copies as u32)
        .ok_or(Error::Resource { dim: usize::MAX, cap })?;
    if dim > cap {
        return Err(Error::Resource { dim, cap });
    }
    if copies == 1 {
        return Ok(base.clone());
    }

    // powers[m] = rho^{(x)m}
    let mut powers = vec![CMat::identity(1, 1)];
    for m in 1..copies {
        let next = kron(&powers[m - 1], &base.rho);
        powers.push(next);
    }
    let rho = kron(&powers[copies - 1], &base.rho);

    let drho = base
        .drho
        .iter()
        .map(|dr| {
            let mut acc = CMat::zeros(dim, dim);
            for pos in 0..copies {
                let left = &powers[pos];
                let right = &powers[copies - 1 - pos];
                acc += kron(&kron(left, dr), right);
            }
            acc
        })
        .collect();

    Ok(StateModel {
        rho,
        drho,
        theta: base.theta.clone(),
        label: format!("{} x{}", base.label, copies),
        copies: base.copies * copies,
    })
}

/// Model specification as read from JSON.
///
/// `{"family": "bloch"|"dephasing", "theta": [...], "active": [...], "copies": M}`.
/// For `dephasing`, `theta` is `[eps]` or `[theta_1, theta_2, eps]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub theta: Vec<f64>,
    #[serde(default)]
    pub active: Option<Vec<usize>>,
    #[serde(default = "default_copies")]
    pub copies: usize,
}

fn default_copies() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Bloch,
    Dephasing,
}

impl ModelSpec {
    pub fn bloch(theta: Vec<f64>, active: Vec<usize>, copies: usize) -> Self {
        Self { family: ModelFamily::Bloch, theta, active: Some(active), copies }
    }

    pub fn dephasing(epsilon: f64, copies: usize) -> Self {
        Self { family: ModelFamily::Dephasing, theta: vec![epsilon], active: None, copies }
    }

    /// Builds the single-copy model.
    pub fn base_model(&self) -> Result<StateModel> {
        match self.family {
            ModelFamily::Bloch => {
                let active = self
                    .active
                    .clone()
                    .unwrap_or_else(|| (1..=self.theta.len().clamp(1, 3)).collect());
                qubit_bloch_model(&ParameterPoint::new(self.theta.clone()), &active)
            }
            ModelFamily::Dephasing => {
                if let Some(active) = &self.active {
                    if active != &[1, 2] {
                        return Err(Error::InvalidState(
                            "the dephasing family estimates exactly parameters [1, 2]".into(),
                        ));
                    }
                }
                match self.theta.as_slice() {
                    [eps] => dephasing_model(*eps, [0.0, 0.0]),
                    [t1, t2, eps] => dephasing_model(*eps, [*t1, *t2]),
                    other => Err(Error::InvalidState(format!(
                        "dephasing theta must be [eps] or [theta1, theta2, eps], got {} values",
                        other.len()
                    ))),
                }
            }
        }
    }

    pub fn build(&self) -> Result<StateModel> {
        tensor_power(&self.base_model()?, self.copies)
    }

    pub fn build_with_cap(&self, cap: usize) -> Result<StateModel> {
        tensor_power_with_cap(&self.base_model()?, self.copies, cap)
    }

    /// The dephasing noise parameter, if this is a dephasing spec.
    pub fn epsilon(&self) -> Option<f64> {
        match self.family {
            ModelFamily::Dephasing => self.theta.last().copied(),
            ModelFamily::Bloch => None,
        }
    }
}
