//! POVMs and their Kraus factorizations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};

/// Default pruning threshold on `Tr Pi_k`.
pub const DEFAULT_PRUNE_TAU: f64 = 1e-6;

/// Smallest eigenvalue of `G = sum A_k^dagger A_k` accepted by [`renormalize`].
pub const RENORM_FLOOR: f64 = 1e-12;

/// A POVM: positive semidefinite elements summing to the identity.
#[derive(Debug, Clone)]
pub struct Povm {
    pub elements: Vec<CMat>,
}

impl Povm {
    pub fn new(elements: Vec<CMat>) -> Self {
        Self { elements }
    }

    pub fn dim(&self) -> usize {
        self.elements.first().map_or(0, |e| e.nrows())
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// `|| sum_k Pi_k - I ||_F`.
    pub fn completeness_defect(&self) -> f64 {
        let d = self.dim();
        let sum = self
            .elements
            .iter()
            .fold(CMat::zeros(d, d), |acc, e| acc + e);
        linalg::frobenius(&(sum - linalg::identity(d)))
    }

    /// Smallest eigenvalue across all elements.
    pub fn min_eigenvalue(&self) -> f64 {
        self.elements
            .iter()
            .map(linalg::min_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks completeness (1e-8) and positivity (-1e-10).
    pub fn is_valid(&self) -> bool {
        !self.is_empty() && self.completeness_defect() < 1e-8 && self.min_eigenvalue() > -1e-10
    }

    pub fn traces(&self) -> Vec<f64> {
        self.elements.iter().map(|e| linalg::trace(e).re).collect()
    }

    pub fn to_json(&self) -> PovmJson {
        PovmJson {
            dim: self.dim(),
            k: self.len(),
            elements: self.elements.iter().map(matrix_to_pairs).collect(),
        }
    }

    pub fn from_json(json: &PovmJson) -> Result<Self> {
        if json.elements.len() != json.k {
            return Err(Error::Parse(format!(
                "POVM declares K = {} but has {} elements",
                json.k,
                json.elements.len()
            )));
        }
        let elements = json
            .elements
            .iter()
            .map(|e| matrix_from_pairs(e, json.dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { elements })
    }
}

/// Serialized POVM: each element is a `dim x dim` array of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovmJson {
    pub dim: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub elements: Vec<Vec<Vec<[f64; 2]>>>,
}

pub fn matrix_to_pairs(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn matrix_from_pairs(rows: &[Vec<[f64; 2]>], dim: usize) -> Result<CMat> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Parse(format!("expected a {dim}x{dim} matrix")));
    }
    let mut m = CMat::zeros(dim, dim);
    for (i, row) in rows.iter().enumerate() {
        for (j, z) in row.iter().enumerate() {
            m[(i, j)] = c(z[0], z[1]);
        }
    }
    Ok(m)
}

/// Kraus factors `A_k` with `A_k^dagger A_k = Pi_k`.
#[derive(Debug, Clone)]
pub struct KrausEnsemble {
    pub factors: Vec<CMat>,
}

impl KrausEnsemble {
    pub fn new(factors: Vec<CMat>) -> Self {
        Self { factors }
    }

    pub fn dim(&self) -> usize {
        self.factors.first().map_or(0, |a| a.ncols())
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// `G = sum_k A_k^dagger A_k`.
    pub fn gram(&self) -> CMat {
        let d = self.dim();
        self.factors
            .iter()
            .fold(CMat::zeros(d, d), |acc, a| acc + a.adjoint() * a)
    }

    pub fn completeness_defect(&self) -> f64 {
        linalg::frobenius(&(self.gram() - linalg::identity(self.dim())))
    }

    /// Sum of squared Frobenius distances to another ensemble of equal shape.
    pub fn distance(&self, other: &KrausEnsemble) -> f64 {
        self.factors
            .iter()
            .zip(&other.factors)
            .map(|(a, b)| linalg::frobenius(&(a - b)).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// `Pi_k = A_k^dagger A_k`, symmetrized to exact Hermiticity.
pub fn povm_from_kraus(ke: &KrausEnsemble) -> Povm {
    Povm {
        elements: ke
            .factors
            .iter()
            .map(|a| linalg::hermitize(&(a.adjoint() * a)))
            .collect(),
    }
}

/// Canonical factors `A_k = Pi_k^{1/2}`.
pub fn kraus_from_povm(p: &Povm) -> Result<KrausEnsemble> {
    let mut factors = Vec::with_capacity(p.len());
    for (index, e) in p.elements.iter().enumerate() {
        let min_eig = linalg::min_eigenvalue(e);
        if min_eig < -1e-8 {
            return Err(Error::NotPsd { index, min_eig });
        }
        factors.push(linalg::psd_sqrt(e));
    }
    Ok(KrausEnsemble { factors })
}

/// `K` factors with i.i.d. standard complex Gaussian entries, renormalized.
pub fn random_kraus_init(d: usize, k: usize, seed: u64) -> Result<KrausEnsemble> {
    if k == 0 || d == 0 {
        return Err(Error::InvalidConfig("random init needs d >= 1 and K >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let factors = (0..k)
        .map(|_| {
            CMat::from_fn(d, d, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                c(re * scale, im * scale)
            })
        })
        .collect();
    renormalize(&KrausEnsemble { factors })
}

/// `A_k -> A_k G^{-1/2}` so that the factors are complete again.
pub fn renormalize(ke: &KrausEnsemble) -> Result<KrausEnsemble> {
    let g = ke.gram();
    let g_inv_sqrt = linalg::inv_sqrt(&g, RENORM_FLOOR)?;
    Ok(KrausEnsemble {
        factors: ke.factors.iter().map(|a| a * &g_inv_sqrt).collect(),
    })
}

/// Drops elements with `Tr Pi_k < tau` and restores completeness by
/// `G^{-1/2} Pi_k G^{-1/2}` conjugation.
pub fn prune(p: &Povm, tau: f64) -> Result<Povm> {
    if tau < 0.0 {
        return Err(Error::InvalidConfig(format!("prune threshold {tau} is negative")));
    }
    let kept: Vec<CMat> = p
        .elements
        .iter()
        .filter(|e| linalg::trace(e).re >= tau)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyPovm);
    }
    if kept.len() == p.len() {
        return Ok(p.clone());
    }
    let d = p.dim();
    let g = kept.iter().fold(CMat::zeros(d, d), |acc, e| acc + e);
    let g_inv_sqrt = linalg::inv_sqrt(&g, RENORM_FLOOR)?;
    Ok(Povm {
        elements: kept
            .iter()
            .map(|e| linalg::hermitize(&(&g_inv_sqrt * e * &g_inv_sqrt)))
            .collect(),
    })
}
