//! Riemannian geometry kernel.
//!
//! A [`ManifoldSpec`] is an ordered product of [`Factor`]s; a single factor is
//! just a product of length one. Points and tangent vectors are flat arrays in
//! the ambient representation of every factor, concatenated in factor order.
//!
//! | factor   | string  | ambient dim | representation                 |
//! |----------|---------|-------------|--------------------------------|
//! | `R<d>`   | `R3`    | d           | plain coordinates              |
//! | `S<d>`   | `S2`    | d + 1       | unit vector                    |
//! | `SPD<n>` | `SPD2`  | n²          | symmetric matrix, row-major    |

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub mod spd;
pub mod sphere;

/// Tolerance for the point and tangent membership checks.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

pub(crate) mod vec_ops {
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
        a.iter().map(|x| x * s).collect()
    }

    /// `y += alpha * x`
    pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }
}

use vec_ops::{dot, norm};

/// One irreducible manifold factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Factor {
    /// `R^d`
    Euclidean(usize),
    /// The `d`-sphere `S^d` embedded in `R^{d+1}`.
    Sphere(usize),
    /// `n x n` symmetric positive-definite matrices.
    Spd(usize),
}

impl Factor {
    pub fn ambient_dim(&self) -> usize {
        match *self {
            Factor::Euclidean(d) => d,
            Factor::Sphere(d) => d + 1,
            Factor::Spd(n) => n * n,
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match *self {
            Factor::Euclidean(d) | Factor::Sphere(d) => d,
            Factor::Spd(n) => n * (n + 1) / 2,
        }
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self, Factor::Euclidean(_))
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Factor::Euclidean(d) | Factor::Sphere(d) => d >= 1,
            Factor::Spd(n) => n >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid manifold factor {self:?}")))
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Euclidean(d) => write!(f, "R{d}"),
            Factor::Sphere(d) => write!(f, "S{d}"),
            Factor::Spd(n) => write!(f, "SPD{n}"),
        }
    }
}

/// A point on a manifold, in ambient coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

/// A tangent vector together with its base point.
#[derive(Clone, Debug, PartialEq)]
pub struct Tangent {
    pub base: Point,
    pub vec: Vec<f64>,
}

impl Tangent {
    pub fn new(base: Point, vec: Vec<f64>) -> Self {
        Tangent { base, vec }
    }

    pub fn scaled(&self, s: f64) -> Tangent {
        Tangent::new(self.base.clone(), vec_ops::scale(&self.vec, s))
    }
}

/// Geometry every point and tangent lives on: a non-empty product of factors.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ManifoldSpec {
    factors: Vec<Factor>,
}

impl ManifoldSpec {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Config("manifold product must be non-empty".into()));
        }
        for f in &factors {
            f.validate()?;
        }
        Ok(ManifoldSpec { factors })
    }

    /// `R^d`. Panics if `d == 0`.
    pub fn euclidean(d: usize) -> Self {
        Self::new(vec![Factor::Euclidean(d)]).expect("Euclidean dimension must be >= 1")
    }

    /// `S^d` in `R^{d+1}`. Panics if `d == 0`.
    pub fn sphere(d: usize) -> Self {
        Self::new(vec![Factor::Sphere(d)]).expect("sphere dimension must be >= 1")
    }

    /// `SPD(n)`. Panics if `n < 2`.
    pub fn spd(n: usize) -> Self {
        Self::new(vec![Factor::Spd(n)]).expect("SPD order must be >= 2")
    }

    /// Cartesian product, flattening nested products.
    pub fn product(parts: &[ManifoldSpec]) -> Self {
        let factors: Vec<Factor> = parts.iter().flat_map(|p| p.factors.iter().copied()).collect();
        Self::new(factors).expect("product of valid specs is valid")
    }

    /// `self^k`: the k-fold product used for action chunks.
    pub fn power(&self, k: usize) -> Self {
        assert!(k >= 1, "power must be >= 1");
        let factors = (0..k).flat_map(|_| self.factors.iter().copied()).collect();
        ManifoldSpec { factors }
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn ambient_dim(&self) -> usize {
        self.factors.iter().map(Factor::ambient_dim).sum()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.factors.iter().map(Factor::intrinsic_dim).sum()
    }

    pub fn is_euclidean(&self) -> bool {
        self.factors.iter().all(Factor::is_euclidean)
    }

    /// Each factor with its coordinate range in the flat ambient array.
    pub fn factor_ranges(&self) -> impl Iterator<Item = (Factor, Range<usize>)> + '_ {
        self.factors.iter().scan(0usize, |offset, f| {
            let start = *offset;
            *offset += f.ambient_dim();
            Some((*f, start..*offset))
        })
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.ambient_dim() {
            return Err(Error::Precondition(format!(
                "{what} has {len} coordinates, {self} needs {}",
                self.ambient_dim()
            )));
        }
        Ok(())
    }

    /// Verifies the point invariants (unit sphere factors, SPD factors
    /// symmetric with positive spectrum, all coordinates finite).
    pub fn check_point(&self, x: &Point) -> Result<()> {
        self.check_len("point", x.len())?;
        if x.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("point has non-finite coordinates".into()));
        }
        for (f, r) in self.factor_ranges() {
            let c = &x.0[r];
            match f {
                Factor::Euclidean(_) => {}
                Factor::Sphere(_) => {
                    let n = norm(c);
                    if (n - 1.0).abs() > MEMBERSHIP_TOL {
                        return Err(Error::Precondition(format!("sphere point has norm {n}")));
                    }
                }
                Factor::Spd(n) => {
                    check_symmetric(n, c, "SPD point")?;
                    let lo = spd::min_eigenvalue(n, c);
                    if !(lo > 0.0) {
                        return Err(Error::Precondition(format!(
                            "SPD point has minimum eigenvalue {lo}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Verifies that `v.vec` lies in the tangent space at `v.base`.
    pub fn check_tangent(&self, v: &Tangent) -> Result<()> {
        self.check_len("tangent base", v.base.len())?;
        self.check_len("tangent vector", v.vec.len())?;
        if v.vec.iter().any(|x| !x.is_finite()) {
            return Err(Error::Precondition("tangent has non-finite coordinates".into()));
        }
        for (f, r) in self.factor_ranges() {
            let (b, u) = (&v.base.0[r.clone()], &v.vec[r]);
            match f {
                Factor::Euclidean(_) => {}
                Factor::Sphere(_) => {
                    let d = dot(b, u);
                    if d.abs() > MEMBERSHIP_TOL * norm(u).max(1.0) {
                        return Err(Error::Precondition(format!(
                            "sphere tangent not orthogonal to base (<x, v> = {d})"
                        )));
                    }
                }
                Factor::Spd(n) => check_symmetric(n, u, "SPD tangent")?,
            }
        }
        Ok(())
    }

    fn check_base(&self, x: &Point, v: &Tangent) -> Result<()> {
        if v.base != *x {
            return Err(Error::Precondition("tangent is not based at the given point".into()));
        }
        self.check_tangent(v)
    }

    pub fn exp_map(&self, x: &Point, v: &Tangent) -> Result<Point> {
        self.check_base(x, v)?;
        Ok(Point(self.exp_unchecked(&x.0, &v.vec)))
    }

    pub(crate) fn exp_unchecked(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        for (f, r) in self.factor_ranges() {
            let (xc, vc) = (&x[r.clone()], &v[r]);
            match f {
                Factor::Euclidean(_) => out.extend(xc.iter().zip(vc).map(|(a, b)| a + b)),
                Factor::Sphere(_) => out.extend(sphere::exp(xc, vc)),
                Factor::Spd(n) => out.extend(spd::exp(n, xc, vc)),
            }
        }
        out
    }

    pub fn log_map(&self, x: &Point, y: &Point) -> Result<Tangent> {
        self.check_len("point", x.len())?;
        self.check_len("point", y.len())?;
        Ok(Tangent::new(x.clone(), self.log_unchecked(&x.0, &y.0)?))
    }

    pub(crate) fn log_unchecked(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        for (f, r) in self.factor_ranges() {
            let (xc, yc) = (&x[r.clone()], &y[r]);
            match f {
                Factor::Euclidean(_) => out.extend(yc.iter().zip(xc).map(|(b, a)| b - a)),
                Factor::Sphere(_) => out.extend(sphere::log(xc, yc)?),
                Factor::Spd(n) => out.extend(spd::log(n, xc, yc)),
            }
        }
        Ok(out)
    }

    /// Geodesic distance; on products the root of the summed squared factor
    /// distances.
    pub fn distance(&self, x: &Point, y: &Point) -> Result<f64> {
        self.check_len("point", x.len())?;
        self.check_len("point", y.len())?;
        let mut sq = 0.0;
        for (f, r) in self.factor_ranges() {
            let (xc, yc) = (&x.0[r.clone()], &y.0[r]);
            let d = match f {
                Factor::Euclidean(_) => {
                    xc.iter().zip(yc).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                }
                Factor::Sphere(_) => sphere::angle(xc, yc),
                Factor::Spd(n) => spd::distance(n, xc, yc),
            };
            sq += d * d;
        }
        Ok(sq.sqrt())
    }

    /// Nearest valid point: sphere factors are normalized, SPD factors are
    /// symmetrized with their eigenvalues floored at [`spd::EIGEN_FLOOR`].
    pub fn project_to_manifold(&self, raw: &[f64]) -> Result<Point> {
        self.check_len("raw point", raw.len())?;
        let mut out = Vec::with_capacity(raw.len());
        for (f, r) in self.factor_ranges() {
            let c = &raw[r];
            match f {
                Factor::Euclidean(_) => out.extend_from_slice(c),
                Factor::Sphere(_) => out.extend(sphere::project_point(c)?),
                Factor::Spd(n) => out.extend(spd::project_point(n, c)?),
            }
        }
        Ok(Point(out))
    }

    /// Orthogonal projection of an ambient vector onto `T_x M`.
    pub fn project_to_tangent(&self, x: &Point, raw: &[f64]) -> Result<Tangent> {
        self.check_len("point", x.len())?;
        self.check_len("raw tangent", raw.len())?;
        Ok(Tangent::new(x.clone(), self.project_tangent_unchecked(&x.0, raw)))
    }

    pub(crate) fn project_tangent_unchecked(&self, x: &[f64], raw: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(raw.len());
        for (f, r) in self.factor_ranges() {
            let (xc, c) = (&x[r.clone()], &raw[r]);
            match f {
                Factor::Euclidean(_) => out.extend_from_slice(c),
                Factor::Sphere(_) => out.extend(sphere::project_tangent(xc, c)),
                Factor::Spd(n) => out.extend(spd::project_tangent(n, c)),
            }
        }
        out
    }

    /// Riemannian inner product `g_x(u, v)`.
    pub fn inner(&self, x: &Point, u: &Tangent, v: &Tangent) -> Result<f64> {
        if u.base != *x || v.base != *x {
            return Err(Error::Precondition("tangents are not based at the given point".into()));
        }
        self.check_len("tangent", u.vec.len())?;
        self.check_len("tangent", v.vec.len())?;
        Ok(self.inner_unchecked(&x.0, &u.vec, &v.vec))
    }

    pub(crate) fn inner_unchecked(&self, x: &[f64], u: &[f64], v: &[f64]) -> f64 {
        self.factor_ranges()
            .map(|(f, r)| {
                let (xc, uc, vc) = (&x[r.clone()], &u[r.clone()], &v[r]);
                match f {
                    Factor::Euclidean(_) | Factor::Sphere(_) => dot(uc, vc),
                    Factor::Spd(n) => spd::inner(n, xc, uc, vc),
                }
            })
            .sum()
    }

    /// `|v|_{g_x}` at the tangent's own base point.
    pub fn norm(&self, v: &Tangent) -> f64 {
        self.inner_unchecked(&v.base.0, &v.vec, &v.vec).max(0.0).sqrt()
    }

    /// Ambient-coordinate gradient of `|r|^2_{g_x}` with respect to `r`.
    pub(crate) fn norm_sq_grad(&self, x: &[f64], r: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(r.len());
        for (f, rg) in self.factor_ranges() {
            let (xc, rc) = (&x[rg.clone()], &r[rg]);
            match f {
                Factor::Euclidean(_) | Factor::Sphere(_) => out.extend(rc.iter().map(|v| 2.0 * v)),
                Factor::Spd(n) => out.extend(spd::norm_sq_grad(n, xc, rc)),
            }
        }
        out
    }

    /// Point and velocity at time `t` of the constant-speed geodesic that
    /// starts at `x0` for `t = 0` and reaches `x1` at `t = 1`. `t` may lie
    /// outside `[0, 1]`, in which case the geodesic is extended.
    pub fn geodesic(&self, x0: &Point, x1: &Point, t: f64) -> Result<(Point, Tangent)> {
        self.check_len("point", x0.len())?;
        self.check_len("point", x1.len())?;
        let mut p = Vec::with_capacity(x0.len());
        let mut v = Vec::with_capacity(x0.len());
        for (f, r) in self.factor_ranges() {
            let (a, b) = (&x0.0[r.clone()], &x1.0[r]);
            match f {
                _ if t == 0.0 && !f.is_euclidean() => {
                    // Exact start point; the velocity formula is still needed.
                    let (_, vc) = self.factor_geodesic(f, a, b, t)?;
                    p.extend_from_slice(a);
                    v.extend(vc);
                }
                Factor::Euclidean(_) => {
                    let (pc, vc) = euclidean_interpolant(a, b, t, 0.0);
                    p.extend(pc);
                    v.extend(vc);
                }
                Factor::Sphere(_) => {
                    let (pc, vc) = sphere::geodesic(a, b, t)?;
                    p.extend(pc);
                    v.extend(vc);
                }
                Factor::Spd(n) => {
                    let (pc, vc) = spd::geodesic(n, a, b, t);
                    p.extend(pc);
                    v.extend(vc);
                }
            }
        }
        let p = Point(p);
        Ok((p.clone(), Tangent::new(p, v)))
    }

    fn factor_geodesic(&self, f: Factor, a: &[f64], b: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(match f {
            Factor::Euclidean(_) => euclidean_interpolant(a, b, t, 0.0),
            Factor::Sphere(_) => sphere::geodesic(a, b, t)?,
            Factor::Spd(n) => spd::geodesic(n, a, b, t),
        })
    }

    pub fn zero_tangent(&self, x: &Point) -> Tangent {
        Tangent::new(x.clone(), vec![0.0; x.len()])
    }
}

/// Gaussian CFM interpolant `(1 - (1 - sigma) t) x0 + t x1` and its constant
/// velocity `x1 - (1 - sigma) x0`. With `sigma = 0` this is the Euclidean
/// geodesic, so both code paths share this function and agree bit-for-bit.
pub(crate) fn euclidean_interpolant(x0: &[f64], x1: &[f64], t: f64, sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let a = 1.0 - (1.0 - sigma) * t;
    let b = 1.0 - sigma;
    let p = x0.iter().zip(x1).map(|(u, v)| a * u + t * v).collect();
    let vel = x0.iter().zip(x1).map(|(u, v)| v - b * u).collect();
    (p, vel)
}

fn check_symmetric(n: usize, m: &[f64], what: &str) -> Result<()> {
    let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (m[i * n + j] - m[j * n + i]).abs();
            if d > MEMBERSHIP_TOL * scale {
                return Err(Error::Precondition(format!("{what} not symmetric (asymmetry {d})")));
            }
        }
    }
    Ok(())
}

impl fmt::Display for ManifoldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, factor) in self.factors.iter().enumerate() {
            if i > 0 {
                f.write_str("x")?;
            }
            write!(f, "{factor}")?;
        }
        Ok(())
    }
}

impl FromStr for ManifoldSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: &str| Error::ParseSpec { input: s.to_string(), reason: reason.to_string() };
        if s.is_empty() {
            return Err(err("empty string"));
        }
        let mut factors = Vec::new();
        for token in s.split('x') {
            let (kind, digits) = if let Some(rest) = token.strip_prefix("SPD") {
                ("SPD", rest)
            } else if let Some(rest) = token.strip_prefix('S') {
                ("S", rest)
            } else if let Some(rest) = token.strip_prefix('R') {
                ("R", rest)
            } else {
                return Err(err(&format!("unknown factor `{token}`")));
            };
            // Only canonical decimal forms so that printing reproduces the input.
            if digits.is_empty()
                || !digits.bytes().all(|b| b.is_ascii_digit())
                || (digits.len() > 1 && digits.starts_with('0'))
            {
                return Err(err(&format!("factor `{token}` needs a dimension")));
            }
            let d: usize = digits.parse().map_err(|_| err(&format!("bad dimension in `{token}`")))?;
            let factor = match kind {
                "SPD" => Factor::Spd(d),
                "S" => Factor::Sphere(d),
                _ => Factor::Euclidean(d),
            };
            factor.validate().map_err(|_| err(&format!("factor `{token}` has invalid dimension")))?;
            factors.push(factor);
        }
        ManifoldSpec::new(factors)
    }
}

impl Serialize for ManifoldSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ManifoldSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
