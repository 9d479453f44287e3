//! Steepest descent on Kraus factors with a Lagrange-multiplier completeness term.
//!
//! One iteration, for factors `A_k` with `Pi_k = A_k^dagger A_k`:
//!
//! 1. Build `X_k = sum_l (2 rho^l l_k^l - rho (l_k^l)^2)` from the outcome
//!    statistics (see [`GradientWorkspace`]).
//! 2. `Lambda = 1/2 sum_k (X_k Pi_k + Pi_k X_k)` keeps the update tangent to
//!    the completeness constraint.
//! 3. Trial updates `A_k (I + alpha (X_k - Lambda))` followed by
//!    renormalization `A_k G^{-1/2}` are scored for every candidate step size,
//!    and the best one (possibly `alpha = 0`) is kept. The grid is rescaled
//!    between iterations: up when its largest step wins, down when nothing
//!    improves.
//!
//! Along `H_k = A_k (X_k - Lambda)` the objective `Tr(W J^{-1})` has
//! directional derivative `-2 sum_k <H_k, H_k>`, so small steps never increase it.
//!
//! For a general weight `W` the contractions run through `J^{-1} W^{1/2}`
//! instead of `J^{-1}`; with `W = I` this is the plain inverse.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{self, PROB_FLOOR};
use crate::linalg::{self, CMat, RMat};
use crate::measurement::{self, KrausEnsemble, Povm, PovmJson};
use crate::model::{StateModel, WeightMatrix};

/// Default step-size grid; `0` is always an implicit extra candidate.
pub const DEFAULT_ALPHAS: [f64; 6] = [0.001, 0.003, 0.01, 0.03, 0.1, 0.3];
/// Consecutive `alpha = 0` iterations after which a run is declared converged.
pub const MAX_STALLS: usize = 5;
/// Factor applied to the candidate grid after each stalled iteration.
pub const STALL_SHRINK: f64 = 0.1;
/// Factor applied to the candidate grid when its largest step wins.
pub const GRID_GROW: f64 = 10.0;
/// Upper limit on the accumulated grid scale.
pub const MAX_GRID_SCALE: f64 = 1e4;
/// Attempts at drawing a non-degenerate random start.
pub const INIT_ATTEMPTS: usize = 10;
/// Relative tolerance used by [`find_min_outcomes`].
pub const KSTAR_REL_TOL: f64 = 1e-5;

/// Optimizer settings. Serialized with exactly these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptConfig {
    /// Number of outcomes; 0 selects the Caratheodory cap [`max_useful_k`].
    #[serde(rename = "K", default)]
    pub k: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_eps_stop")]
    pub eps_stop: f64,
    #[serde(default = "default_alphas")]
    pub alpha_candidates: Vec<f64>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_prune_tau")]
    pub prune_tau: f64,
    /// Row-major weight matrix; `None` means the identity.
    #[serde(default)]
    pub weight: Option<Vec<Vec<f64>>>,
}

fn default_max_iters() -> usize {
    1000
}
fn default_eps_stop() -> f64 {
    1e-10
}
fn default_alphas() -> Vec<f64> {
    DEFAULT_ALPHAS.to_vec()
}
fn default_restarts() -> usize {
    1
}
fn default_prune_tau() -> f64 {
    measurement::DEFAULT_PRUNE_TAU
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            k: 0,
            max_iters: default_max_iters(),
            eps_stop: default_eps_stop(),
            alpha_candidates: default_alphas(),
            restarts: default_restarts(),
            seed: 0,
            prune_tau: default_prune_tau(),
            weight: None,
        }
    }
}

impl OptConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_candidates.is_empty() || self.alpha_candidates.iter().any(|&a| a.is_nan() || a <= 0.0) {
            return Err(Error::InvalidConfig("alpha_candidates must be non-empty and positive".into()));
        }
        if self.eps_stop.is_nan() || self.eps_stop <= 0.0 {
            return Err(Error::InvalidConfig("eps_stop must be positive".into()));
        }
        if self.prune_tau < 0.0 {
            return Err(Error::InvalidConfig("prune_tau must be non-negative".into()));
        }
        Ok(())
    }

    pub fn weight_matrix(&self, n: usize) -> Result<WeightMatrix> {
        match &self.weight {
            None => Ok(WeightMatrix::identity(n)),
            Some(rows) => {
                let w = WeightMatrix::from_rows(rows)?;
                if w.dim() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: w.dim() });
                }
                Ok(w)
            }
        }
    }

    /// The outcome count to use for a model of dimension `d` with `n` parameters.
    pub fn effective_k(&self, d: usize, n: usize) -> usize {
        if self.k == 0 {
            max_useful_k(d, n)
        } else {
            self.k
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
}

/// Trajectory and result of one optimization run.
#[derive(Debug, Clone)]
pub struct OptRun {
    pub final_povm: Povm,
    /// Objective before the first step and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub final_objective: f64,
    pub iterations_used: usize,
    pub stop_reason: StopReason,
    pub accepted_alphas: Vec<f64>,
    pub seed: u64,
    pub k: usize,
}

/// JSON form of an [`OptRun`], including the full trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptRunJson {
    pub final_objective: f64,
    pub iterations_used: usize,
    pub stop_reason: StopReason,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub outcomes: usize,
    pub objective_trace: Vec<f64>,
    pub accepted_alphas: Vec<f64>,
    pub povm: PovmJson,
}

impl OptRun {
    pub fn to_json(&self) -> OptRunJson {
        OptRunJson {
            final_objective: self.final_objective,
            iterations_used: self.iterations_used,
            stop_reason: self.stop_reason,
            seed: self.seed,
            k: self.k,
            outcomes: self.final_povm.len(),
            objective_trace: self.objective_trace.clone(),
            accepted_alphas: self.accepted_alphas.clone(),
            povm: self.final_povm.to_json(),
        }
    }
}

/// Per-iteration quantities shared by the gradient terms.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    /// `p_k = Tr(A_k rho A_k^dagger)`.
    pub p_k: Vec<f64>,
    /// `d_ik = Tr(A_k d_i rho A_k^dagger)`, indexed `[i][k]`.
    pub d_ik: Vec<Vec<f64>>,
    /// `D_lk = sum_j B_jl d_jk` with `B = J^{-1} W^{1/2}`, indexed `[l][k]`.
    pub big_d: Vec<Vec<f64>>,
    /// `rho^l = sum_j B_jl d_j rho`.
    pub rho_sup: Vec<CMat>,
    /// `l_k^l = D_lk / p_k`, indexed `[k][l]`; zero for frozen outcomes.
    pub l_ki: Vec<Vec<f64>>,
    /// Outcomes with `p_k` below the probability floor.
    pub frozen: Vec<bool>,
    pub objective: f64,
}

impl GradientWorkspace {
    pub fn new(model: &StateModel, ke: &KrausEnsemble, w: &WeightMatrix) -> Result<Self> {
        let povm = measurement::povm_from_kraus(ke);
        let (p_k, d_ik) = fisher::outcome_traces(model, &povm);
        let n = model.n_params();
        let j = fisher::cfim_from_traces(&p_k, &d_ik).map_err(|e| match e {
            Error::SingularProbability { outcome, p } => Error::DegenerateOutcome { outcome, p },
            other => other,
        })?;
        let objective = fisher::weighted_inverse_trace(&j, w)?;
        let chol = j.cholesky().ok_or_else(|| Error::SingularCfim { eigenvalues: vec![] })?;
        let w_sqrt = linalg::real_sqrt_psd(w.matrix());
        let b: RMat = chol.solve(&w_sqrt);

        let k_count = p_k.len();
        let frozen: Vec<bool> = p_k.iter().map(|&p| p < PROB_FLOOR).collect();
        let big_d: Vec<Vec<f64>> = (0..n)
            .map(|l| (0..k_count).map(|k| (0..n).map(|j| b[(j, l)] * d_ik[j][k]).sum()).collect())
            .collect();
        let rho_sup: Vec<CMat> = (0..n)
            .map(|l| {
                model
                    .drho
                    .iter()
                    .enumerate()
                    .fold(CMat::zeros(model.dim(), model.dim()), |acc, (j, dr)| acc + dr.scale(b[(j, l)]))
            })
            .collect();
        let l_ki = (0..k_count)
            .map(|k| {
                (0..n)
                    .map(|l| if frozen[k] { 0.0 } else { big_d[l][k] / p_k[k] })
                    .collect()
            })
            .collect();
        Ok(Self { p_k, d_ik, big_d, rho_sup, l_ki, frozen, objective })
    }

    /// `X_k = sum_l (2 rho^l l_k^l - rho (l_k^l)^2)`; zero for frozen outcomes.
    pub fn x_terms(&self, model: &StateModel) -> Vec<CMat> {
        let d = model.dim();
        self.l_ki
            .iter()
            .zip(&self.frozen)
            .map(|(ls, &frozen)| {
                if frozen {
                    return CMat::zeros(d, d);
                }
                let mut x = CMat::zeros(d, d);
                let mut sq = 0.0;
                for (l, &lk) in ls.iter().enumerate() {
                    x += self.rho_sup[l].scale(2.0 * lk);
                    sq += lk * lk;
                }
                x -= model.rho.scale(sq);
                linalg::hermitize(&x)
            })
            .collect()
    }
}

/// The matrices `X_k` of the update rule.
pub fn gradient_terms(model: &StateModel, ke: &KrausEnsemble, w: &WeightMatrix) -> Result<Vec<CMat>> {
    let ws = GradientWorkspace::new(model, ke, w)?;
    Ok(ws.x_terms(model))
}

/// `Lambda = 1/2 sum_k (X_k^dagger Pi_k + Pi_k X_k)`.
pub fn lagrange_multiplier(ke: &KrausEnsemble, xs: &[CMat]) -> CMat {
    let d = ke.dim();
    let mut lam = CMat::zeros(d, d);
    for (a, x) in ke.factors.iter().zip(xs) {
        let pi = a.adjoint() * a;
        lam += x.adjoint() * &pi + &pi * x;
    }
    linalg::hermitize(&lam.scale(0.5))
}

/// Update directions `H_k = A_k (X_k - Lambda)`.
pub fn update_directions(ke: &KrausEnsemble, xs: &[CMat], lambda: &CMat) -> Vec<CMat> {
    ke.factors.iter().zip(xs).map(|(a, x)| a * (x - lambda)).collect()
}

/// `sum_k <H_k, H_k>`.
pub fn direction_norm_sq(hs: &[CMat]) -> f64 {
    hs.iter().map(|h| linalg::frobenius(h).powi(2)).sum()
}

/// `A_k <- A_k (I + alpha (X_k - Lambda))` followed by renormalization.
pub fn step(ke: &KrausEnsemble, xs: &[CMat], lambda: &CMat, alpha: f64) -> Result<KrausEnsemble> {
    step_with(ke, xs, lambda, alpha, measurement::renormalize)
}

/// [`step`] with a caller-supplied renormalization, used to inject faults.
pub fn step_with(
    ke: &KrausEnsemble,
    xs: &[CMat],
    lambda: &CMat,
    alpha: f64,
    renormalize: impl Fn(&KrausEnsemble) -> Result<KrausEnsemble>,
) -> Result<KrausEnsemble> {
    if alpha == 0.0 {
        return Ok(ke.clone());
    }
    let d = ke.dim();
    let id = linalg::identity(d);
    let moved = KrausEnsemble::new(
        ke.factors
            .iter()
            .zip(xs)
            .map(|(a, x)| a * (&id + (x - lambda).scale(alpha)))
            .collect(),
    );
    renormalize(&moved)
}

/// Objective of the POVM induced by a Kraus ensemble.
pub fn ensemble_objective(model: &StateModel, ke: &KrausEnsemble, w: &WeightMatrix) -> Result<f64> {
    fisher::objective(model, &measurement::povm_from_kraus(ke), w)
}

#[derive(Debug, Clone)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub objective: f64,
    pub ensemble: KrausEnsemble,
    /// True when no candidate improved on staying put.
    pub stalled: bool,
    /// Objective per candidate in the order given (`None` for failed trials).
    pub trials: Vec<Option<f64>>,
}

/// Scores every candidate step and returns the argmin, including the implicit
/// `alpha = 0`. Ties go to the larger step.
pub fn line_search(
    model: &StateModel,
    ke: &KrausEnsemble,
    xs: &[CMat],
    lambda: &CMat,
    candidates: &[f64],
    w: &WeightMatrix,
    current: f64,
) -> LineSearchResult {
    let mut best_alpha = 0.0;
    let mut best_f = current;
    let mut best_ke: Option<KrausEnsemble> = None;
    let mut trials = Vec::with_capacity(candidates.len());
    for &alpha in candidates {
        let trial = step(ke, xs, lambda, alpha)
            .and_then(|next| ensemble_objective(model, &next, w).map(|f| (next, f)));
        match trial {
            Ok((next, f)) if f.is_finite() => {
                trials.push(Some(f));
                if f < best_f || (f == best_f && alpha > best_alpha) {
                    best_f = f;
                    best_alpha = alpha;
                    best_ke = Some(next);
                }
            }
            _ => trials.push(None),
        }
    }
    LineSearchResult {
        alpha: best_alpha,
        objective: best_f,
        stalled: best_ke.is_none(),
        ensemble: best_ke.unwrap_or_else(|| ke.clone()),
        trials,
    }
}

/// Caratheodory bound on the useful number of outcomes: `d(d+1)/2 + n(n+1)`.
pub fn max_useful_k(d: usize, n: usize) -> usize {
    d * (d + 1) / 2 + n * (n + 1)
}

fn init_seed(seed: u64, attempt: usize) -> u64 {
    seed.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Draws a random start whose CFIM is invertible.
pub fn initial_ensemble(model: &StateModel, k: usize, seed: u64, w: &WeightMatrix) -> Result<KrausEnsemble> {
    let mut last = String::new();
    for attempt in 0..INIT_ATTEMPTS {
        let ke = measurement::random_kraus_init(model.dim(), k, init_seed(seed, attempt))?;
        match GradientWorkspace::new(model, &ke, w) {
            Ok(_) => return Ok(ke),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::InitFailure { attempts: INIT_ATTEMPTS, last })
}

/// Runs the descent from a random start determined by `config.seed`.
pub fn run(model: &StateModel, config: &OptConfig) -> Result<OptRun> {
    config.validate()?;
    let n = model.n_params();
    let w = config.weight_matrix(n)?;
    let k = config.effective_k(model.dim(), n);
    if k < n + 1 {
        log::warn!("K = {k} outcomes cannot give a full-rank Fisher matrix for {n} parameters");
    }
    let start = initial_ensemble(model, k, config.seed, &w)?;
    run_from(model, start, config, &w)
}

/// Runs the descent from a given ensemble.
pub fn run_from(model: &StateModel, start: KrausEnsemble, config: &OptConfig, w: &WeightMatrix) -> Result<OptRun> {
    config.validate()?;
    let k = start.len();
    let mut ke = start;
    let mut current = ensemble_objective(model, &ke, w)?;
    let mut trace = vec![current];
    let mut alphas = Vec::new();
    let mut stop_reason = StopReason::MaxIters;
    let mut stalls = 0usize;
    let mut scale = 1.0;
    let mut iterations = 0usize;

    while iterations < config.max_iters {
        iterations += 1;
        let ws = GradientWorkspace::new(model, &ke, w)?;
        let xs = ws.x_terms(model);
        let lambda = lagrange_multiplier(&ke, &xs);
        let candidates: Vec<f64> = config.alpha_candidates.iter().map(|a| a * scale).collect();
        let ls = line_search(model, &ke, &xs, &lambda, &candidates, w, current);
        if ls.stalled {
            stalls += 1;
            if stalls >= MAX_STALLS {
                stop_reason = StopReason::Converged;
                break;
            }
            scale *= STALL_SHRINK;
            continue;
        }
        stalls = 0;
        if ls.alpha >= candidates.iter().copied().fold(0.0, f64::max) {
            scale = (scale * GRID_GROW).min(MAX_GRID_SCALE);
        } else if scale < 1.0 {
            scale = 1.0;
        }
        let improvement = current - ls.objective;
        ke = ls.ensemble;
        current = ls.objective;
        trace.push(current);
        alphas.push(ls.alpha);
        if improvement < config.eps_stop {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    let raw = measurement::povm_from_kraus(&ke);
    let (final_povm, final_objective) = match measurement::prune(&raw, config.prune_tau) {
        Ok(pruned) => match fisher::objective(model, &pruned, w) {
            Ok(f) => (pruned, f),
            Err(_) => (raw, current),
        },
        Err(_) => (raw, current),
    };
    Ok(OptRun {
        final_povm,
        objective_trace: trace,
        final_objective,
        iterations_used: iterations,
        stop_reason,
        accepted_alphas: alphas,
        seed: config.seed,
        k,
    })
}

/// Best of `config.restarts` independent runs with seeds `seed, seed+1, ...`.
///
/// Runs execute in parallel; the winner is chosen by objective, ties going to
/// the lowest seed, so the result does not depend on scheduling.
pub fn multi_restart(model: &StateModel, config: &OptConfig) -> Result<OptRun> {
    if config.restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be at least 1".into()));
    }
    let results: Vec<Result<OptRun>> = (0..config.restarts as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = OptConfig { seed: config.seed.wrapping_add(i), ..config.clone() };
            run(model, &cfg)
        })
        .collect();
    let mut best: Option<OptRun> = None;
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(run) => {
                if best.as_ref().is_none_or(|b| run.final_objective < b.final_objective) {
                    best = Some(run);
                }
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    best.ok_or(Error::AllRestartsFailed { restarts: config.restarts, errors })
}

/// Result of the minimal-outcome search.
#[derive(Debug, Clone)]
pub struct MinOutcomes {
    pub k_star: usize,
    pub run: OptRun,
    /// Best objective found for each K tried, largest K first.
    pub per_k: Vec<(usize, f64)>,
}

/// Searches decreasing outcome counts for the smallest K whose best objective
/// stays within [`KSTAR_REL_TOL`] of the best found.
pub fn find_min_outcomes(model: &StateModel, config: &OptConfig) -> Result<MinOutcomes> {
    let n = model.n_params();
    let cap = max_useful_k(model.dim(), n);
    let start = config.effective_k(model.dim(), n).min(cap);
    let floor = (n + 1).min(start);
    let mut runs: Vec<OptRun> = Vec::new();
    let mut best = f64::INFINITY;
    for k in (floor..=start).rev() {
        let cfg = OptConfig { k, ..config.clone() };
        let result = match multi_restart(model, &cfg) {
            Ok(r) => r,
            Err(e) if runs.is_empty() => return Err(e),
            Err(_) => break,
        };
        let f = result.final_objective;
        let within = f <= best * (1.0 + KSTAR_REL_TOL);
        best = best.min(f);
        runs.push(result);
        if !within {
            break;
        }
    }
    let per_k = runs.iter().map(|r| (r.k, r.final_objective)).collect();
    let chosen = runs
        .into_iter()
        .filter(|r| r.final_objective <= best * (1.0 + KSTAR_REL_TOL))
        .min_by_key(|r| r.k)
        .ok_or_else(|| Error::InvalidConfig("no outcome count could be optimized".into()))?;
    Ok(MinOutcomes { k_star: chosen.final_povm.len().min(chosen.k), run: chosen, per_k })
}
