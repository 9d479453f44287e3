//! Dense primal-dual interior-point solver for small complex Hermitian SDPs.
//!
//! Standard form, with `<A, B> = Re Tr(A B)`:
//!
//! ```text
//! primal:  min <C, Z>   s.t.  <A_i, Z> = b_i,  Z >= 0
//! dual:    max b^T y    s.t.  S = C - sum_i y_i A_i >= 0
//! ```
//!
//! Infeasible-start path following with the HKM search direction and a
//! Mehrotra predictor-corrector step. Constraint matrices are stored sparse.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat, C64};

/// Hermitian matrix stored as the list of its nonzero entries (both triangles).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHermitian {
    pub size: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseHermitian {
    pub fn new(size: usize) -> Self {
        Self { size, entries: Vec::new() }
    }

    pub fn from_dense(m: &CMat, tol: f64) -> Self {
        let mut s = Self::new(m.nrows());
        for q in 0..m.ncols() {
            for p in 0..m.nrows() {
                let v = m[(p, q)];
                if v.norm() > tol {
                    s.entries.push((p, q, v));
                }
            }
        }
        s
    }

    pub fn push(&mut self, row: usize, col: usize, v: C64) {
        self.entries.push((row, col, v));
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.size, self.size);
        for &(p, q, v) in &self.entries {
            m[(p, q)] += v;
        }
        m
    }

    /// `Re Tr(self * m)`.
    pub fn inner(&self, m: &CMat) -> f64 {
        self.entries.iter().map(|&(p, q, v)| (v * m[(q, p)]).re).sum()
    }

    /// `m += alpha * self`.
    pub fn add_to(&self, m: &mut CMat, alpha: f64) {
        for &(p, q, v) in &self.entries {
            m[(p, q)] += v * alpha;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub c: CMat,
    pub a: Vec<SparseHermitian>,
    pub b: DVector<f64>,
}

impl SdpProblem {
    pub fn size(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_constraints(&self) -> usize {
        self.a.len()
    }

    /// `[<A_i, Z>]_i`.
    pub fn apply(&self, z: &CMat) -> DVector<f64> {
        DVector::from_iterator(self.a.len(), self.a.iter().map(|a| a.inner(z)))
    }

    /// `sum_i y_i A_i`.
    pub fn adjoint(&self, y: &DVector<f64>) -> CMat {
        let mut m = CMat::zeros(self.size(), self.size());
        for (a, &yi) in self.a.iter().zip(y.iter()) {
            a.add_to(&mut m, yi);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpSettings {
    pub max_iters: usize,
    /// Target absolute duality gap.
    pub gap_tol: f64,
    /// Target relative primal and dual infeasibility.
    pub feas_tol: f64,
    /// A result is still certified at these looser levels if progress stalls.
    pub accept_gap: f64,
    pub accept_feas: f64,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            gap_tol: 1e-10,
            feas_tol: 1e-10,
            accept_gap: 1e-7,
            accept_feas: 1e-7,
            step_fraction: 0.98,
        }
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdpIterate {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub y: DVector<f64>,
    pub z: CMat,
    pub s: CMat,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub iterations: usize,
    pub log: Vec<SdpIterate>,
}

/// Writes the log as `iteration,primal,dual,gap` CSV.
pub fn log_to_csv(log: &[SdpIterate]) -> String {
    let mut out = String::from("iteration,primal,dual,gap\n");
    for it in log {
        out.push_str(&format!("{},{:.12e},{:.12e},{:.3e}\n", it.iteration, it.primal, it.dual, it.gap));
    }
    out
}

struct Point {
    y: DVector<f64>,
    z: CMat,
    s: CMat,
}

fn cholesky_inverse(m: &CMat) -> Option<CMat> {
    m.clone().cholesky().map(|ch| ch.inverse())
}

/// Largest step in `[0, 1]` keeping `x + alpha dx` PSD, scaled by `fraction`.
fn step_length(x: &CMat, dx: &CMat, fraction: f64) -> f64 {
    let Some(ch) = x.clone().cholesky() else {
        return 0.0;
    };
    let l = ch.l();
    let Some(a) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(m) = l.solve_lower_triangular(&a.adjoint()) else {
        return 0.0;
    };
    let lo = linalg::min_eigenvalue(&linalg::hermitize(&m));
    if lo >= 0.0 {
        1.0
    } else {
        (fraction * (-1.0 / lo)).min(1.0)
    }
}

/// Schur matrix `M_ij = Re Tr(A_i Z A_j S^{-1})`.
fn schur_matrix(problem: &SdpProblem, z: &CMat, s_inv: &CMat) -> RMat {
    let m = problem.n_constraints();
    let n = problem.size();
    let mut out = RMat::zeros(m, m);
    for j in 0..m {
        let aj = &problem.a[j];
        let g = if aj.nnz() <= n {
            // sum over entries u Z[:, r] S^{-1}[s, :]
            let mut g = CMat::zeros(n, n);
            for &(r, s, u) in &aj.entries {
                let col = z.column(r) * u;
                let row = s_inv.row(s);
                g.ger(C64::new(1.0, 0.0), &col, &row.transpose(), C64::new(1.0, 0.0));
            }
            g
        } else {
            z * aj.to_dense() * s_inv
        };
        for i in 0..=j {
            let v = problem.a[i].inner(&g);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

fn solve_schur(m: &RMat, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    m.clone().lu().solve(rhs)
}

/// Solves the SDP, or returns [`Error::NoCertificate`] with the best iterate.
pub fn solve(problem: &SdpProblem, settings: &SdpSettings) -> Result<SdpSolution> {
    let n = problem.size();
    let m = problem.n_constraints();
    if problem.b.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: problem.b.len() });
    }
    let c_norm = linalg::frobenius(&problem.c);
    let b_norm = problem.b.norm();
    let a_norms: Vec<f64> = problem.a.iter().map(|a| a.entries.iter().map(|e| e.2.norm_sqr()).sum::<f64>().sqrt()).collect();
    let max_a = a_norms.iter().copied().fold(0.0, f64::max);
    let xi = (n as f64)
        .sqrt()
        .max(10.0)
        .max(
            problem
                .b
                .iter()
                .zip(&a_norms)
                .map(|(bi, an)| (1.0 + bi.abs()) / (1.0 + an))
                .fold(0.0, f64::max),
        );
    let eta = (n as f64).sqrt().max(10.0).max(c_norm).max(max_a);
    let id = linalg::identity(n);
    let mut pt = Point { y: DVector::zeros(m), z: id.scale(xi), s: id.scale(eta) };
    let mut log = Vec::new();
    let mut best: Option<SdpSolution> = None;

    let certified = |sol: &SdpSolution, gap_tol: f64, feas_tol: f64| {
        sol.gap <= gap_tol && sol.primal_infeas <= feas_tol && sol.dual_infeas <= feas_tol
    };

    for iteration in 0..=settings.max_iters {
        let rp = &problem.b - problem.apply(&pt.z);
        let rd = &problem.c - problem.adjoint(&pt.y) - &pt.s;
        let primal = linalg::trace_prod_re(&problem.c, &pt.z);
        let dual = problem.b.dot(&pt.y);
        let current = SdpSolution {
            y: pt.y.clone(),
            z: pt.z.clone(),
            s: pt.s.clone(),
            primal,
            dual,
            gap: (primal - dual).abs(),
            primal_infeas: rp.norm() / (1.0 + b_norm),
            dual_infeas: linalg::frobenius(&rd) / (1.0 + c_norm),
            iterations: iteration,
            log: Vec::new(),
        };
        log.push(SdpIterate {
            iteration,
            primal,
            dual,
            gap: current.gap,
            primal_infeas: current.primal_infeas,
            dual_infeas: current.dual_infeas,
        });
        let score = |s: &SdpSolution| s.gap.max(s.primal_infeas).max(s.dual_infeas);
        if best.as_ref().is_none_or(|b| score(&current) < score(b)) {
            best = Some(current.clone());
        }
        if certified(&current, settings.gap_tol, settings.feas_tol) || iteration == settings.max_iters {
            break;
        }

        let mu = linalg::trace_prod_re(&pt.z, &pt.s) / n as f64;
        let Some(s_inv) = cholesky_inverse(&pt.s) else { break };
        let schur = schur_matrix(problem, &pt.z, &s_inv);

        let direction = |target: f64, corr: Option<&CMat>| -> Option<(DVector<f64>, CMat, CMat)> {
            let mut centre = id.scale(target);
            if let Some(cm) = corr {
                centre -= cm;
            }
            let t = &centre * &s_inv - &pt.z - &pt.z * &rd * &s_inv;
            let rhs = &rp - problem.apply(&t);
            let dy = solve_schur(&schur, &rhs)?;
            let ds = &rd - problem.adjoint(&dy);
            let dz = linalg::hermitize(&(&centre * &s_inv - &pt.z - &pt.z * &ds * &s_inv));
            Some((dy, dz, ds))
        };

        let Some((_, dz_a, ds_a)) = direction(0.0, None) else { break };
        let ap = step_length(&pt.z, &dz_a, 1.0);
        let ad = step_length(&pt.s, &ds_a, 1.0);
        let mu_aff = linalg::trace_prod_re(&(&pt.z + dz_a.scale(ap)), &(&pt.s + ds_a.scale(ad))) / n as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let corr = &dz_a * &ds_a;
        let Some((dy, dz, ds)) = direction(sigma * mu, Some(&corr)) else { break };
        let ap = step_length(&pt.z, &dz, settings.step_fraction);
        let ad = step_length(&pt.s, &ds, settings.step_fraction);
        if ap == 0.0 && ad == 0.0 {
            break;
        }
        pt.z = linalg::hermitize(&(&pt.z + dz.scale(ap)));
        pt.s = linalg::hermitize(&(&pt.s + ds.scale(ad)));
        pt.y += dy * ad;
    }

    let mut best = best.expect("at least one iterate is recorded");
    best.log = log;
    if certified(&best, settings.accept_gap, settings.accept_feas) {
        Ok(best)
    } else {
        Err(Error::NoCertificate { value: best.dual, gap: best.gap, iterations: best.iterations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, pauli};

    fn dense(m: &CMat) -> SparseHermitian {
        SparseHermitian::from_dense(m, 0.0)
    }

    #[test]
    fn sparse_inner_matches_dense_trace() {
        let a = pauli(1) + pauli(3).scale(0.5);
        let m = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.2, 0.3), c(-0.4, 1.0), c(2.0, 0.0)]);
        let sa = SparseHermitian::from_dense(&a, 1e-15);
        assert!((sa.inner(&m) - (a * &m).trace().re).abs() < 1e-14);
    }

    #[test]
    fn minimum_eigenvalue_program() {
        // max y s.t. C - y I >= 0 has value lambda_min(C); the primal is
        // min <C, Z> over density matrices.
        let cm = CMat::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(3.0, 0.0)]);
        let problem = SdpProblem { c: cm.clone(), a: vec![dense(&linalg::identity(2))], b: DVector::from_vec(vec![1.0]) };
        let sol = solve(&problem, &SdpSettings::default()).unwrap();
        let expected = linalg::min_eigenvalue(&cm);
        assert!((sol.dual - expected).abs() < 1e-8, "{} vs {}", sol.dual, expected);
        assert!((sol.primal - expected).abs() < 1e-8);
        assert!(sol.gap < 1e-7);
        assert!(linalg::min_eigenvalue(&sol.z) > -1e-10);
    }

    #[test]
    fn largest_singular_value_program() {
        // The Hermitian dilation of B has largest eigenvalue sigma_max(B).
        let b = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.5), c(0.0, 0.0), c(-1.0, 0.0)]);
        let mut h = CMat::zeros(4, 4);
        h.view_mut((0, 2), (2, 2)).copy_from(&b);
        h.view_mut((2, 0), (2, 2)).copy_from(&b.adjoint());
        let problem = SdpProblem { c: -h, a: vec![dense(&linalg::identity(4))], b: DVector::from_vec(vec![1.0]) };
        let sol = solve(&problem, &SdpSettings::default()).unwrap();
        let smax = b.singular_values().max();
        assert!((sol.primal + smax).abs() < 1e-8);
    }

    #[test]
    fn diagonal_lp() {
        // min x1 + 2 x2 s.t. x1 + x2 = 1, x >= 0 embedded on the diagonal.
        let cm = CMat::from_diagonal(&DVector::from_vec(vec![c(1.0, 0.0), c(2.0, 0.0)]));
        let problem = SdpProblem { c: cm, a: vec![dense(&linalg::identity(2))], b: DVector::from_vec(vec![1.0]) };
        let sol = solve(&problem, &SdpSettings::default()).unwrap();
        assert!((sol.primal - 1.0).abs() < 1e-8);
        assert!((sol.z[(0, 0)].re - 1.0).abs() < 1e-6);
        let csv = log_to_csv(&sol.log);
        assert!(csv.starts_with("iteration,primal,dual,gap\n"));
        assert_eq!(csv.lines().count(), sol.log.len() + 1);
    }

    #[test]
    fn infeasible_primal_is_not_certified() {
        // Tr Z = -1 with Z >= 0 has no solution.
        let problem = SdpProblem {
            c: linalg::identity(2),
            a: vec![dense(&linalg::identity(2))],
            b: DVector::from_vec(vec![-1.0]),
        };
        let settings = SdpSettings { max_iters: 30, ..SdpSettings::default() };
        assert!(matches!(solve(&problem, &settings), Err(Error::NoCertificate { .. })));
    }
}
