//! Dense complex linear algebra used throughout the crate.
//!
//! Everything here works on `DMatrix<Complex64>`; problem sizes stay at or
//! below a few hundred rows, so dense storage and nalgebra's Hermitian
//! eigensolver are adequate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(d: usize) -> CMat {
    CMat::identity(d, d)
}

/// Pauli matrix sigma_1, sigma_2 or sigma_3 (1-based index). Index 0 is the identity.
pub fn pauli(i: usize) -> CMat {
    match i {
        0 => identity(2),
        1 => CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        2 => CMat::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        3 => CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
        _ => panic!("pauli index {i} out of range"),
    }
}

pub fn dagger(m: &CMat) -> CMat {
    m.adjoint()
}

/// `(m + m^dagger) / 2`.
pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Largest entrywise modulus of `m - m^dagger`.
pub fn hermiticity_defect(m: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn trace(m: &CMat) -> C64 {
    m.trace()
}

/// `Tr(a b)` without forming the product.
pub fn trace_prod(a: &CMat, b: &CMat) -> C64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = ZERO;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Real part of `Tr(a b)`, the Hilbert-Schmidt inner product for Hermitian arguments.
pub fn trace_prod_re(a: &CMat, b: &CMat) -> f64 {
    trace_prod(a, b).re
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn frobenius_real(m: &RMat) -> f64 {
    m.iter().map(|z| z * z).sum::<f64>().sqrt()
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues in ascending order.
pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let h = hermitize(m);
    let eig = h.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    (values, vectors)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    let h = hermitize(m);
    h.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Applies `f` to the spectrum: `V diag(f(lambda)) V^dagger`.
pub fn spectral_map(m: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (vals, vecs) = eigh(m);
    let n = m.nrows();
    let mut scaled = vecs.clone();
    for (k, &v) in vals.iter().enumerate() {
        let s = f(v);
        for r in 0..n {
            scaled[(r, k)] *= s;
        }
    }
    hermitize(&(scaled * vecs.adjoint()))
}

/// Hermitian PSD square root; eigenvalues at round-off level or below zero are clamped.
pub fn psd_sqrt(m: &CMat) -> CMat {
    let (vals, _) = eigh(m);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = 64.0 * f64::EPSILON * scale;
    spectral_map(m, |v| if v <= floor { 0.0 } else { v.sqrt() })
}

/// `m^{-1/2}` for a positive-definite Hermitian matrix.
pub fn inv_sqrt(m: &CMat, floor: f64) -> Result<CMat> {
    let min = min_eigenvalue(m);
    if min <= floor {
        return Err(Error::DegenerateEnsemble { min_eig: min });
    }
    Ok(spectral_map(m, |v| 1.0 / v.sqrt()))
}

/// Symmetric eigen-decomposition of a real symmetric matrix, ascending.
pub fn eigh_real(m: &RMat) -> (Vec<f64>, RMat) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = RMat::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    (values, vectors)
}

pub fn real_spectral_map(m: &RMat, f: impl Fn(f64) -> f64) -> RMat {
    let (vals, vecs) = eigh_real(m);
    let diag = RMat::from_diagonal(&DVector::from_iterator(vals.len(), vals.iter().map(|&v| f(v))));
    let out = &vecs * diag * vecs.transpose();
    (&out + out.transpose()) * 0.5
}

pub fn real_sqrt_psd(m: &RMat) -> RMat {
    real_spectral_map(m, |v| v.max(0.0).sqrt())
}

/// Orthonormal basis of Hermitian d x d matrices under `<A, B> = Re Tr(A B)`.
///
/// Ordering: diagonal units first, then for each `a < b` the symmetric and
/// antisymmetric off-diagonal pairs.
pub fn hermitian_basis(d: usize) -> Vec<CMat> {
    let mut basis = Vec::with_capacity(d * d);
    for a in 0..d {
        let mut e = CMat::zeros(d, d);
        e[(a, a)] = ONE;
        basis.push(e);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for a in 0..d {
        for b in (a + 1)..d {
            let mut sym = CMat::zeros(d, d);
            sym[(a, b)] = c(s, 0.0);
            sym[(b, a)] = c(s, 0.0);
            basis.push(sym);
            let mut anti = CMat::zeros(d, d);
            anti[(a, b)] = c(0.0, -s);
            anti[(b, a)] = c(0.0, s);
            basis.push(anti);
        }
    }
    basis
}

/// Real coordinates of a Hermitian matrix in [`hermitian_basis`].
pub fn hermitian_coords(m: &CMat) -> DVector<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * d);
    for a in 0..d {
        out.push(m[(a, a)].re);
    }
    let r2 = std::f64::consts::SQRT_2;
    for a in 0..d {
        for b in (a + 1)..d {
            let z = m[(a, b)];
            out.push(r2 * z.re);
            out.push(-r2 * z.im);
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`hermitian_coords`].
pub fn hermitian_from_coords(x: &[f64], d: usize) -> CMat {
    assert_eq!(x.len(), d * d);
    let mut m = CMat::zeros(d, d);
    for a in 0..d {
        m[(a, a)] = c(x[a], 0.0);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut idx = d;
    for a in 0..d {
        for b in (a + 1)..d {
            let re = x[idx] * s;
            let im = -x[idx + 1] * s;
            m[(a, b)] = c(re, im);
            m[(b, a)] = c(re, -im);
            idx += 2;
        }
    }
    m
}

/// Outer product `|u><v|`.
pub fn outer(u: &DVector<C64>, v: &DVector<C64>) -> CMat {
    u * v.adjoint()
}

/// `m^{-1}` for a real symmetric positive-definite matrix, or `None` if Cholesky fails.
pub fn spd_inverse(m: &RMat) -> Option<RMat> {
    m.clone().cholesky().map(|ch| ch.inverse())
}

/// Trace norm (sum of singular values) of a square complex matrix.
pub fn trace_norm(m: &CMat) -> f64 {
    m.clone().singular_values().iter().sum()
}

/// Trace norm of a real square matrix.
pub fn trace_norm_real(m: &RMat) -> f64 {
    m.clone().singular_values().iter().sum()
}
