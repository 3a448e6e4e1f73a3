//! Unit hypersphere embedded in its ambient space.
//!
//! Points are unit vectors; tangent vectors at `x` are the ambient vectors
//! orthogonal to `x`. The metric is the restriction of the ambient dot product.

use super::vec_ops::{axpy, dot, norm, scale};
use crate::error::{Error, Result};

/// `<x, y>` below this value means `y` is (numerically) antipodal to `x`.
pub const ANTIPODAL_TOL: f64 = 1e-12;

pub(crate) fn exp(x: &[f64], v: &[f64]) -> Vec<f64> {
    let theta = norm(v);
    if theta == 0.0 {
        return x.to_vec();
    }
    let (s, c) = theta.sin_cos();
    let mut out = scale(x, c);
    axpy(&mut out, s / theta, v);
    normalize_in_place(&mut out);
    out
}

/// Geodesic angle between two unit vectors, `2 atan2(|x - y|, |x + y|)`.
///
/// Exactly symmetric in its arguments and accurate for both tiny and
/// near-antipodal angles, unlike `acos(<x, y>)`.
pub(crate) fn angle(x: &[f64], y: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut sum = 0.0;
    for (a, b) in x.iter().zip(y) {
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

pub(crate) fn log(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let c = dot(x, y);
    if c < -1.0 + ANTIPODAL_TOL {
        return Err(Error::CutLocus(format!(
            "sphere points are antipodal (<x, y> = {c})"
        )));
    }
    let mut w = y.to_vec();
    axpy(&mut w, -c, x);
    let s = norm(&w);
    if s == 0.0 {
        return Ok(vec![0.0; x.len()]);
    }
    let theta = angle(x, y);
    Ok(scale(&w, theta / s))
}

pub(crate) fn project_tangent(x: &[f64], raw: &[f64]) -> Vec<f64> {
    let mut out = raw.to_vec();
    axpy(&mut out, -dot(x, raw), x);
    out
}

pub(crate) fn project_point(raw: &[f64]) -> Result<Vec<f64>> {
    let n = norm(raw);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Degenerate(format!(
            "cannot normalize vector of norm {n} onto the sphere"
        )));
    }
    Ok(scale(raw, 1.0 / n))
}

/// Point and velocity at time `t` of the constant-speed geodesic from `x0`
/// (t = 0) to `x1` (t = 1).
pub(crate) fn geodesic(x0: &[f64], x1: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let v = log(x0, x1)?;
    let theta = norm(&v);
    if theta == 0.0 {
        return Ok((x0.to_vec(), vec![0.0; x0.len()]));
    }
    let (s, c) = (t * theta).sin_cos();
    let mut point = scale(x0, c);
    axpy(&mut point, s / theta, &v);
    normalize_in_place(&mut point);
    let mut vel = scale(x0, -theta * s);
    axpy(&mut vel, c, &v);
    // Remove the O(eps) radial leak so the velocity is tangent at `point`.
    let vel = project_tangent(&point, &vel);
    Ok((point, vel))
}

fn normalize_in_place(x: &mut [f64]) {
    let n = norm(x);
    for xi in x.iter_mut() {
        *xi /= n;
    }
}
