use thiserror::Error;

/// Errors raised across the estimation toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("dimension {dim} exceeds the configured cap {cap}")]
    Resource { dim: usize, cap: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("POVM element {index} is not PSD (min eigenvalue {min_eig:e})")]
    NotPsd { index: usize, min_eig: f64 },

    #[error("degenerate Kraus ensemble: smallest eigenvalue of the completeness sum is {min_eig:e}")]
    DegenerateEnsemble { min_eig: f64 },

    #[error("all POVM elements were pruned")]
    EmptyPovm,

    #[error("outcome {outcome} has probability {p:e} but carries information")]
    SingularProbability { outcome: usize, p: f64 },

    #[error("classical Fisher matrix is singular or ill-conditioned (eigenvalues {eigenvalues:?})")]
    SingularCfim { eigenvalues: Vec<f64> },

    #[error("SLD quantum Fisher matrix is singular (null direction {null_direction:?})")]
    SingularQfi { null_direction: Vec<f64> },

    #[error("no SLD exists for parameter {param}: derivative leaves the support of rho (numerator {numerator:e})")]
    NoSld { param: usize, numerator: f64 },

    #[error("outcome {outcome} has vanishing probability {p:e} while carrying information")]
    DegenerateOutcome { outcome: usize, p: f64 },

    #[error("initialization failed after {attempts} attempts: {last}")]
    InitFailure { attempts: usize, last: String },

    #[error("all {restarts} restarts failed: {errors:?}")]
    AllRestartsFailed { restarts: usize, errors: Vec<String> },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("SDP solver did not certify the bound after {iterations} iterations (value {value}, gap {gap:e})")]
    NoCertificate { value: f64, gap: f64, iterations: usize },

    #[error("free parameter q1 = {q1} is outside the feasible interval [{lo}, {hi}]")]
    InfeasibleParameter { q1: f64, lo: f64, hi: f64 },

    #[error("inconsistent solution: {0}")]
    InconsistentSolution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
