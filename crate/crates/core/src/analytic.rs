//! Closed-form optimal measurements and a classifier mapping numerical POVMs
//! onto them.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher;
use crate::linalg::{self, c, pauli, CMat, C64, ONE};
use crate::measurement::Povm;
use crate::model::{StateModel, WeightMatrix};

/// Classification threshold on the fit residual.
pub const CLASSIFY_TOL: f64 = 1e-3;

const TWO_THIRDS_PI: f64 = 2.0 * PI / 3.0;

fn bloch_element(weight: f64, v: [f64; 3]) -> CMat {
    let mut m = linalg::identity(2);
    for (i, &vi) in v.iter().enumerate() {
        m += pauli(i + 1).scale(vi);
    }
    m.scale(weight)
}

/// Bloch coefficients `(a, b)` of a qubit operator `a (I + b . sigma)`.
fn bloch_coefficients(m: &CMat) -> (f64, [f64; 3]) {
    let a = linalg::trace(m).re / 2.0;
    let mut b = [0.0; 3];
    for (i, bi) in b.iter_mut().enumerate() {
        *bi = linalg::trace_prod_re(m, &pauli(i + 1)) / (2.0 * a);
    }
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrineSpec {
    pub phi1: f64,
}

/// `Pi_k = 1/3 [[1, e^{i phi_k}], [e^{-i phi_k}, 1]]` with `phi_k = phi1 + 2 pi (k-1) / 3`.
pub fn trine_povm(spec: TrineSpec) -> Povm {
    Povm::new(
        (0..3)
            .map(|k| {
                let z = C64::from_polar(1.0, spec.phi1 + TWO_THIRDS_PI * k as f64);
                CMat::from_row_slice(2, 2, &[ONE, z, z.conj(), ONE]).scale(1.0 / 3.0)
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TetraSpec {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Vertices of the reference tetrahedron.
pub fn tetra_vertices() -> [Vector3<f64>; 4] {
    let s = 1.0 / 3f64.sqrt();
    [
        Vector3::new(s, s, s),
        Vector3::new(s, -s, -s),
        Vector3::new(-s, s, -s),
        Vector3::new(-s, -s, s),
    ]
}

/// `R_z(alpha) R_y(beta) R_x(gamma)`.
pub fn euler_rotation(spec: TetraSpec) -> Matrix3<f64> {
    let (sa, ca) = spec.alpha.sin_cos();
    let (sb, cb) = spec.beta.sin_cos();
    let (sg, cg) = spec.gamma.sin_cos();
    let rz = Matrix3::new(ca, -sa, 0.0, sa, ca, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cg, -sg, 0.0, sg, cg);
    rz * ry * rx
}

/// Inverse of [`euler_rotation`] (the branch with `|beta| <= pi/2`).
pub fn euler_angles(r: &Matrix3<f64>) -> TetraSpec {
    TetraSpec {
        alpha: r[(1, 0)].atan2(r[(0, 0)]),
        beta: (-r[(2, 0)]).clamp(-1.0, 1.0).asin(),
        gamma: r[(2, 1)].atan2(r[(2, 2)]),
    }
}

/// `Pi_k = 1/4 (I + R V_k . sigma)`.
pub fn tetrahedron_povm(spec: TetraSpec) -> Povm {
    let r = euler_rotation(spec);
    Povm::new(
        tetra_vertices()
            .iter()
            .map(|v| {
                let w = r * v;
                bloch_element(0.25, [w.x, w.y, w.z])
            })
            .collect(),
    )
}

/// Angles of the two-copy family: `symmetric` enters the `|01>, |10>`
/// amplitudes and `corner` the `|11>` amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoCopySpec {
    pub symmetric: f64,
    pub corner: f64,
}

impl TwoCopySpec {
    /// The member whose Fisher matrix is optimal for the two-parameter model
    /// at the origin: `corner = 2 symmetric`.
    pub fn optimal(symmetric: f64) -> Self {
        Self { symmetric, corner: 2.0 * symmetric }
    }
}

/// Three rank-one elements `|psi_k><psi_k|` plus the singlet projector, with
/// `psi_k = (1/sqrt3, e^{-i a_k}/sqrt6, e^{-i a_k}/sqrt6, e^{-i b_k}/sqrt3)`,
/// `a_k = symmetric + 2 pi k / 3` and `b_k = corner - 2 pi k / 3`.
///
/// The two triangles must turn in opposite directions for the elements to sum
/// to the identity.
pub fn two_copy_povm(spec: TwoCopySpec) -> Povm {
    let s3 = 1.0 / 3f64.sqrt();
    let s6 = 1.0 / 6f64.sqrt();
    let mut elements: Vec<CMat> = (0..3)
        .map(|k| {
            let a = spec.symmetric + TWO_THIRDS_PI * k as f64;
            let b = spec.corner - TWO_THIRDS_PI * k as f64;
            let psi = nalgebra::DVector::from_vec(vec![
                c(s3, 0.0),
                C64::from_polar(s6, -a),
                C64::from_polar(s6, -a),
                C64::from_polar(s3, -b),
            ]);
            linalg::outer(&psi, &psi)
        })
        .collect();
    elements.push(singlet_projector());
    Povm::new(elements)
}

/// `|psi^-><psi^-|` with `psi^- = (|01> - |10>) / sqrt2`.
pub fn singlet_projector() -> CMat {
    let h = c(0.5, 0.0);
    let mut m = CMat::zeros(4, 4);
    m[(1, 1)] = h;
    m[(2, 2)] = h;
    m[(1, 2)] = -h;
    m[(2, 1)] = -h;
    m
}

/// A randomized projective measurement and its mixing weights.
#[derive(Debug, Clone)]
pub struct RandomizedPvm {
    pub weights: Vec<f64>,
    /// Unit Bloch direction of each projective measurement.
    pub directions: Vec<[f64; 3]>,
    /// Elements `w_i (I + n_i.sigma)/2, w_i (I - n_i.sigma)/2` for each `i`.
    pub povm: Povm,
}

/// Optimal qubit measurement built from projective measurements of the
/// rotated SLD operators, mixed with weights proportional to the
/// eigenvalues of `R = sqrt(J_S^{-1/2} W J_S^{-1/2})`.
pub fn randomized_pvm_povm(model: &StateModel, w: &WeightMatrix) -> Result<RandomizedPvm> {
    if model.dim() != 2 {
        return Err(Error::NotApplicable(format!("randomized PVM needs a qubit, got dimension {}", model.dim())));
    }
    let slds = fisher::sld(model)?;
    let js = fisher::sld_qfi_from(model, &slds).j;
    let inv_sqrt = linalg::real_spectral_map(&js, |v| 1.0 / v.sqrt());
    let r = linalg::real_sqrt_psd(&(&inv_sqrt * w.matrix() * &inv_sqrt));
    let (lambda, u) = linalg::eigh_real(&r);
    let coeff = u.transpose() * &inv_sqrt;
    let total: f64 = lambda.iter().sum();
    let n = model.n_params();
    let mut weights = Vec::with_capacity(n);
    let mut directions = Vec::with_capacity(n);
    let mut elements = Vec::with_capacity(2 * n);
    for i in 0..n {
        // only the traceless part of L^i fixes the measured axis
        let li = slds
            .operators
            .iter()
            .enumerate()
            .fold(CMat::zeros(2, 2), |acc, (k, l)| acc + l.scale(coeff[(i, k)]));
        let v = [1, 2, 3].map(|a| linalg::trace_prod_re(&li, &pauli(a)));
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm < 1e-12 {
            return Err(Error::InconsistentSolution(format!("rotated SLD {i} is proportional to the identity")));
        }
        let dir = [v[0] / norm, v[1] / norm, v[2] / norm];
        let wi = lambda[i] / total;
        elements.push(bloch_element(wi / 2.0, dir));
        elements.push(bloch_element(wi / 2.0, [-dir[0], -dir[1], -dir[2]]));
        weights.push(wi);
        directions.push(dir);
    }
    Ok(RandomizedPvm { weights, directions, povm: Povm::new(elements) })
}

/// One member of the three-outcome optimal family for the two-parameter
/// qubit model at `theta = (r cos varphi, r sin varphi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeOutcomeSolution {
    pub p: [f64; 3],
    pub phi: [f64; 3],
    /// `q_k = 1 - 2 p_k`.
    pub q: [f64; 3],
    pub r: f64,
    pub varphi: f64,
}

impl ThreeOutcomeSolution {
    /// `Pi_k = p_k (I + cos phi_k sigma_1 + sin phi_k sigma_2)`.
    pub fn povm(&self) -> Povm {
        Povm::new(
            (0..3)
                .map(|k| bloch_element(self.p[k], [self.phi[k].cos(), self.phi[k].sin(), 0.0]))
                .collect(),
        )
    }

    /// The solution with every angle reflected about the `theta` direction.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for phi in &mut out.phi {
            *phi = 2.0 * self.varphi - *phi;
        }
        out
    }
}

/// `beta = -r / (1 + sqrt(1 - r^2))`.
fn beta(r: f64) -> f64 {
    -r / (1.0 + (1.0 - r * r).sqrt())
}

/// `S = sum_k 1/q_k = (9 - beta^2) / (1 - beta^2)`, with `S - 9` and `S - 1`
/// returned separately to keep precision near `r = 0`.
fn s_parts(r: f64) -> (f64, f64, f64) {
    let b2 = beta(r).powi(2);
    let s_minus_9 = 8.0 * b2 / (1.0 - b2);
    let s_minus_1 = 8.0 / (1.0 - b2);
    (9.0 + s_minus_9, s_minus_9, s_minus_1)
}

/// Interval of admissible `q_1`; a single point `1/3` at `r = 0`.
pub fn three_outcome_interval(r: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::InvalidState(format!("Bloch radius {r} outside [0, 1)")));
    }
    let (s, s9, s1) = s_parts(r);
    let centre = (s - 3.0) / (2.0 * s);
    let half = (s1 * s9).sqrt() / (2.0 * s);
    Ok((centre - half, centre + half))
}

/// Solves for the member of the three-outcome family with free parameter `q1`.
pub fn three_outcome_povm(r: f64, varphi: f64, q1: f64) -> Result<(ThreeOutcomeSolution, Povm)> {
    let (lo, hi) = three_outcome_interval(r)?;
    let slack = 1e-12;
    if !(q1 >= lo - slack && q1 <= hi + slack) {
        return Err(Error::InfeasibleParameter { q1, lo, hi });
    }
    if r == 0.0 {
        let sol = ThreeOutcomeSolution {
            p: [1.0 / 3.0; 3],
            phi: [varphi, varphi + TWO_THIRDS_PI, varphi - TWO_THIRDS_PI],
            q: [1.0 / 3.0; 3],
            r,
            varphi,
        };
        let povm = sol.povm();
        return Ok((sol, povm));
    }
    let (s, _, _) = s_parts(r);
    // q2 + q3 = t, q2 q3 = t / u with u = S - 1/q1
    let t = 1.0 - q1;
    let u = s - 1.0 / q1;
    let disc_tu = (s * (q1 - lo) * (hi - q1) / q1).max(0.0); // t u - 4
    let disc = t * disc_tu / u;
    let root = disc.max(0.0).sqrt();
    let q = [q1, (t + root) / 2.0, (t - root) / 2.0];
    let sq = (1.0 - r * r).sqrt();
    let mut phi = [0.0; 3];
    let mut mags = [0.0; 3];
    let mut p = [0.0; 3];
    for k in 0..3 {
        if !(q[k] > 0.0 && q[k] < 1.0) {
            return Err(Error::InconsistentSolution(format!("q_{} = {} outside (0, 1)", k + 1, q[k])));
        }
        p[k] = (1.0 - q[k]) / 2.0;
        let cos = (sq / q[k] - (2.0 + sq)) / (2.0 * r);
        if cos.abs() > 1.0 + 1e-12 {
            return Err(Error::InconsistentSolution(format!("cos phi_{} = {cos}", k + 1)));
        }
        let cos = cos.clamp(-1.0, 1.0);
        phi[k] = cos.acos();
        mags[k] = p[k] * phi[k].sin();
    }
    // largest p|sin phi| takes the negative sign so the other two stay positive
    let largest = (0..3).fold(0, |best, k| if mags[k] > mags[best] { k } else { best });
    for (k, angle) in phi.iter_mut().enumerate() {
        if k == largest {
            *angle = -*angle;
        }
        *angle += varphi;
    }
    let sol = ThreeOutcomeSolution { p, phi, q, r, varphi };
    let povm = sol.povm();
    Ok((sol, povm))
}

/// Structure recognised by [`classify_povm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PovmStructure {
    Trine { phi1: f64 },
    Tetrahedron { alpha: f64, beta: f64, gamma: f64 },
    TwoCopy { symmetric: f64, corner: f64 },
    ThreeOutcome { r: f64, varphi: f64, q1: f64 },
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub structure: PovmStructure,
    /// Largest Frobenius distance between matched elements of the best fit.
    pub residual: f64,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for perm in permutations(n - 1) {
        for pos in 0..n {
            let mut p = perm.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out
}

/// Smallest over matchings of the largest element-wise Frobenius distance.
pub fn matching_distance(a: &[CMat], b: &[CMat]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    permutations(a.len())
        .iter()
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| linalg::frobenius(&(&a[i] - &b[j])))
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

fn fit_trine(els: &[CMat]) -> Option<(PovmStructure, f64)> {
    els.iter()
        .map(|e| {
            let phi1 = e[(0, 1)].arg();
            let res = matching_distance(els, &trine_povm(TrineSpec { phi1 }).elements);
            (PovmStructure::Trine { phi1 }, res)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

fn fit_three_outcome(els: &[CMat], model: &StateModel) -> Option<(PovmStructure, f64)> {
    let theta = model.bloch_vector()?;
    if theta[2].abs() > 1e-12 {
        return None;
    }
    let r = theta[0].hypot(theta[1]);
    if r >= 1.0 {
        return None;
    }
    let varphi = theta[1].atan2(theta[0]);
    let mut best: Option<(PovmStructure, f64)> = None;
    for e in els {
        let q1 = 1.0 - linalg::trace(e).re;
        let Ok((sol, povm)) = three_outcome_povm(r, varphi, q1) else { continue };
        for cand in [povm, sol.mirrored().povm()] {
            let res = matching_distance(els, &cand.elements);
            if best.as_ref().is_none_or(|b| res < b.1) {
                best = Some((PovmStructure::ThreeOutcome { r, varphi, q1 }, res));
            }
        }
    }
    best
}

fn fit_tetrahedron(els: &[CMat]) -> Option<(PovmStructure, f64)> {
    let targets: Vec<Vector3<f64>> = els
        .iter()
        .map(|e| {
            let (_, b) = bloch_coefficients(e);
            Vector3::new(b[0], b[1], b[2])
        })
        .collect();
    let verts = tetra_vertices();
    let mut best: Option<(PovmStructure, f64)> = None;
    for perm in permutations(4) {
        let h: Matrix3<f64> = (0..4).map(|k| verts[perm[k]] * targets[k].transpose()).sum();
        let svd = h.svd(true, true);
        let (u, vt) = (svd.u?, svd.v_t?);
        let v = vt.transpose();
        let d = (v * u.transpose()).determinant().signum();
        let rot = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
        let angles = euler_angles(&rot);
        let res = matching_distance(els, &tetrahedron_povm(angles).elements);
        if best.as_ref().is_none_or(|b| res < b.1) {
            best = Some((
                PovmStructure::Tetrahedron { alpha: angles.alpha, beta: angles.beta, gamma: angles.gamma },
                res,
            ));
        }
    }
    best
}

fn fit_two_copy(els: &[CMat]) -> Option<(PovmStructure, f64)> {
    let mut best: Option<(PovmStructure, f64)> = None;
    for e in els {
        if e[(0, 0)].re < 1e-6 {
            continue;
        }
        let symmetric = -e[(1, 0)].arg();
        let corner = -e[(3, 0)].arg();
        let spec = TwoCopySpec { symmetric, corner };
        let res = matching_distance(els, &two_copy_povm(spec).elements);
        if best.as_ref().is_none_or(|b| res < b.1) {
            best = Some((PovmStructure::TwoCopy { symmetric, corner }, res));
        }
    }
    best
}

/// Matches a POVM against the known optimal families.
///
/// Elements with trace below `1e-6` are ignored. The model supplies the
/// Bloch vector needed by the three-outcome family.
pub fn classify_povm(p: &Povm, model: &StateModel) -> Classification {
    let els: Vec<CMat> = p.elements.iter().filter(|e| linalg::trace(e).re > 1e-6).cloned().collect();
    let candidates: Vec<(PovmStructure, f64)> = match (p.dim(), els.len()) {
        (2, 3) => [fit_trine(&els), fit_three_outcome(&els, model)].into_iter().flatten().collect(),
        (2, 4) => fit_tetrahedron(&els).into_iter().collect(),
        (4, 4) => fit_two_copy(&els).into_iter().collect(),
        _ => Vec::new(),
    };
    match candidates.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)) {
        Some((structure, residual)) if residual < CLASSIFY_TOL => Classification { structure, residual },
        Some((_, residual)) => Classification { structure: PovmStructure::Unknown, residual },
        None => Classification { structure: PovmStructure::Unknown, residual: f64::INFINITY },
    }
}
