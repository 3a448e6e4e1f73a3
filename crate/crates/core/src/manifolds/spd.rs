//! Symmetric positive-definite matrices under the affine-invariant metric.
//!
//! Matrices are stored flattened row-major. Every quantity handled here is
//! symmetric, so row- and column-major layouts coincide and the flat buffers
//! can be handed to nalgebra directly.
//!
//! ```text
//! Exp_S(V) = S^1/2 expm(S^-1/2 V S^-1/2) S^1/2
//! Log_S(Y) = S^1/2 logm(S^-1/2 Y S^-1/2) S^1/2
//! d(S, Y)  = |logm(S^-1/2 Y S^-1/2)|_F
//! <U, V>_S = tr(S^-1 U S^-1 V)
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue floor applied when projecting onto the SPD cone.
pub const EIGEN_FLOOR: f64 = 1e-8;

pub(crate) fn to_matrix(n: usize, flat: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, flat)
}

pub(crate) fn to_flat(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    out
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn eigh(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    (eig.eigenvalues, eig.eigenvectors)
}

/// `Q f(D) Q^T` for the eigendecomposition `m = Q D Q^T`.
fn spectral_map(vals: &DVector<f64>, vecs: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut scaled = vecs.clone();
    for (j, &lam) in vals.iter().enumerate() {
        let fl = f(lam);
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= fl;
        }
    }
    &scaled * vecs.transpose()
}

/// `(S^1/2, S^-1/2)`.
fn sqrt_and_inv_sqrt(s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (vals, vecs) = eigh(s);
    (
        spectral_map(&vals, &vecs, f64::sqrt),
        spectral_map(&vals, &vecs, |l| 1.0 / l.sqrt()),
    )
}

pub(crate) fn inverse(n: usize, x: &[f64]) -> DMatrix<f64> {
    let (vals, vecs) = eigh(&to_matrix(n, x));
    spectral_map(&vals, &vecs, |l| 1.0 / l)
}

pub fn min_eigenvalue(n: usize, x: &[f64]) -> f64 {
    let (vals, _) = eigh(&to_matrix(n, x));
    vals.iter().copied().fold(f64::INFINITY, f64::min)
}

pub(crate) fn exp(n: usize, x: &[f64], v: &[f64]) -> Vec<f64> {
    let (s, si) = sqrt_and_inv_sqrt(&to_matrix(n, x));
    let w = &si * to_matrix(n, v) * &si;
    let (vals, vecs) = eigh(&w);
    let e = spectral_map(&vals, &vecs, f64::exp);
    to_flat(&(&s * e * &s))
}

/// Eigendecomposition of the whitened matrix `S^-1/2 Y S^-1/2`.
fn whitened(n: usize, x: &[f64], y: &[f64]) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (s, si) = sqrt_and_inv_sqrt(&to_matrix(n, x));
    let w = &si * to_matrix(n, y) * &si;
    let (vals, vecs) = eigh(&w);
    (s, vals, vecs)
}

pub(crate) fn log(n: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
    let (s, vals, vecs) = whitened(n, x, y);
    let l = spectral_map(&vals, &vecs, f64::ln);
    to_flat(&(&s * l * &s))
}

pub(crate) fn distance(n: usize, x: &[f64], y: &[f64]) -> f64 {
    let (_, vals, _) = whitened(n, x, y);
    vals.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt()
}

pub(crate) fn inner(n: usize, x: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let xi = inverse(n, x);
    let a = &xi * to_matrix(n, u);
    let b = &xi * to_matrix(n, v);
    (a * b).trace()
}

/// Ambient gradient of `<r, r>_x` with respect to `r`: `2 S^-1 r S^-1`.
pub(crate) fn norm_sq_grad(n: usize, x: &[f64], r: &[f64]) -> Vec<f64> {
    let xi = inverse(n, x);
    to_flat(&(&xi * to_matrix(n, r) * &xi * 2.0))
}

pub(crate) fn project_tangent(n: usize, raw: &[f64]) -> Vec<f64> {
    let mut out = raw.to_vec();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (raw[i * n + j] + raw[j * n + i]);
            out[i * n + j] = avg;
            out[j * n + i] = avg;
        }
    }
    out
}

pub(crate) fn project_point(n: usize, raw: &[f64]) -> Result<Vec<f64>> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite SPD entries".into()));
    }
    let sym = project_tangent(n, raw);
    let (vals, vecs) = eigh(&to_matrix(n, &sym));
    if vals.iter().all(|&l| l >= EIGEN_FLOOR) {
        return Ok(sym);
    }
    Ok(to_flat(&spectral_map(&vals, &vecs, |l| l.max(EIGEN_FLOOR))))
}

/// Point and velocity at time `t` of the geodesic from `x0` (t = 0) to `x1`.
pub(crate) fn geodesic(n: usize, x0: &[f64], x1: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let (s, vals, vecs) = whitened(n, x0, x1);
    let logs: Vec<f64> = vals.iter().map(|l| l.ln()).collect();
    let at = |f: &dyn Fn(f64) -> f64| {
        let mapped = DVector::from_iterator(logs.len(), logs.iter().map(|&l| f(l)));
        spectral_map(&mapped, &vecs, |v| v)
    };
    let point = at(&|l| (t * l).exp());
    let vel = at(&|l| l * (t * l).exp());
    (to_flat(&(&s * point * &s)), to_flat(&(&s * vel * &s)))
}

/// Congruence `S^1/2 W S^1/2`, mapping a tangent at the identity to one at `S`
/// with the same affine-invariant norm.
pub(crate) fn lift_from_identity(n: usize, s: &[f64], w: &[f64]) -> Vec<f64> {
    let (sq, _) = sqrt_and_inv_sqrt(&to_matrix(n, s));
    to_flat(&(&sq * to_matrix(n, w) * &sq))
}
