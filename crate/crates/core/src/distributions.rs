//! Source distributions `p0` on manifolds.
//!
//! All randomness in the crate flows through [`Rng`], a ChaCha8 stream cipher
//! generator seeded with [`rng_from_seed`]; normal deviates come from
//! `rand_distr::StandardNormal` (ziggurat). Identical seeds give bit-identical
//! streams on every platform.

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::{spd, Factor, ManifoldSpec, Point, Tangent};

pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn uniform01(rng: &mut Rng) -> f64 {
    rng.random::<f64>()
}

/// Default wrapped-Gaussian scale when a config does not give one.
pub const DEFAULT_WRAPPED_SCALE: f64 = 0.5;

fn default_scale() -> f64 {
    DEFAULT_WRAPPED_SCALE
}

fn unit_scale() -> f64 {
    1.0
}

/// Per-factor prior choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorFactor {
    /// `mean + scale * N(0, I)`; mean defaults to the origin.
    EuclideanGaussian {
        #[serde(default)]
        mean: Option<Vec<f64>>,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
    /// Normalized isotropic Gaussian.
    SphereUniform,
    /// Tangent-space Gaussian at `mean` pushed through the exponential map.
    WrappedGaussian {
        mean: Vec<f64>,
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

/// A validated prior over a manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    manifold: ManifoldSpec,
    factors: Vec<PriorFactor>,
}

impl Prior {
    pub fn new(manifold: ManifoldSpec, factors: Vec<PriorFactor>) -> Result<Self> {
        if factors.len() != manifold.factors().len() {
            return Err(Error::Config(format!(
                "prior has {} factors but manifold {manifold} has {}",
                factors.len(),
                manifold.factors().len()
            )));
        }
        for ((f, r), pf) in manifold.factor_ranges().zip(&factors) {
            let single = ManifoldSpec::new(vec![f])?;
            let bad = |why: &str| Error::Config(format!("prior factor {pf:?} on {f}: {why}"));
            match pf {
                PriorFactor::EuclideanGaussian { mean, scale } => {
                    if !f.is_euclidean() {
                        return Err(bad("euclidean_gaussian needs a Euclidean factor"));
                    }
                    if mean.as_ref().is_some_and(|m| m.len() != r.len()) {
                        return Err(bad("mean has wrong dimension"));
                    }
                    if !(*scale > 0.0) {
                        return Err(bad("scale must be positive"));
                    }
                }
                PriorFactor::SphereUniform => {
                    if !matches!(f, Factor::Sphere(_)) {
                        return Err(bad("sphere_uniform needs a sphere factor"));
                    }
                }
                PriorFactor::WrappedGaussian { mean, scale } => {
                    if mean.len() != r.len() {
                        return Err(bad("mean has wrong dimension"));
                    }
                    single.check_point(&Point(mean.clone())).map_err(|e| bad(&e.to_string()))?;
                    if !(*scale > 0.0) {
                        return Err(bad("scale must be positive"));
                    }
                }
            }
        }
        Ok(Prior { manifold, factors })
    }

    /// Standard Gaussian on Euclidean factors, uniform on spheres and a
    /// wrapped Gaussian at the identity on SPD factors.
    pub fn default_for(manifold: &ManifoldSpec) -> Self {
        let factors = manifold
            .factors()
            .iter()
            .map(|f| match *f {
                Factor::Euclidean(_) => PriorFactor::EuclideanGaussian { mean: None, scale: 1.0 },
                Factor::Sphere(_) => PriorFactor::SphereUniform,
                Factor::Spd(n) => PriorFactor::WrappedGaussian {
                    mean: (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.0 }).collect(),
                    scale: DEFAULT_WRAPPED_SCALE,
                },
            })
            .collect();
        Prior::new(manifold.clone(), factors).expect("default prior is valid")
    }

    pub fn manifold(&self) -> &ManifoldSpec {
        &self.manifold
    }

    pub fn factors(&self) -> &[PriorFactor] {
        &self.factors
    }

    /// One draw from the prior.
    pub fn sample(&self, rng: &mut Rng) -> Point {
        let mut out = Vec::with_capacity(self.manifold.ambient_dim());
        for ((f, r), pf) in self.manifold.factor_ranges().zip(&self.factors) {
            let dim = r.len();
            match pf {
                PriorFactor::EuclideanGaussian { mean, scale } => {
                    for i in 0..dim {
                        let m = mean.as_ref().map_or(0.0, |m| m[i]);
                        out.push(m + scale * standard_normal(rng));
                    }
                }
                PriorFactor::SphereUniform => loop {
                    let g: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
                    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > 0.0 {
                        out.extend(g.iter().map(|v| v / n));
                        break;
                    }
                },
                PriorFactor::WrappedGaussian { mean, scale } => {
                    let single = ManifoldSpec::new(vec![f]).expect("validated factor");
                    let mu = Point(mean.clone());
                    let v = tangent_gaussian(&single, &mu, *scale, rng);
                    out.extend(single.exp_unchecked(&mu.0, &v.vec));
                }
            }
        }
        Point(out)
    }

    /// `n >= 1` independent draws.
    pub fn sample_n(&self, n: usize, rng: &mut Rng) -> Vec<Point> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Tiled chunk prior: one auxiliary draw repeated `t_p` times, a point on
    /// `manifold^t_p`.
    pub fn sample_chunk(&self, t_p: usize, rng: &mut Rng) -> Point {
        assert!(t_p >= 1, "prediction horizon must be >= 1");
        tile(&self.sample(rng), t_p)
    }
}

/// `[a, a, ..., a]` with `t_p` copies.
pub fn tile(a: &Point, t_p: usize) -> Point {
    let mut out = Vec::with_capacity(a.len() * t_p);
    for _ in 0..t_p {
        out.extend_from_slice(&a.0);
    }
    Point(out)
}

/// Isotropic Gaussian tangent vector at `x` with per-direction standard
/// deviation `scale` under the Riemannian metric at `x`.
///
/// An ambient Gaussian is projected onto the tangent space (for spheres this
/// already has variance `scale^2` along every tangent direction; for SPD
/// factors symmetrization gives a Frobenius-isotropic matrix, which is then
/// carried to `x` by the congruence `x^1/2 W x^1/2`).
pub fn tangent_gaussian(spec: &ManifoldSpec, x: &Point, scale: f64, rng: &mut Rng) -> Tangent {
    let raw: Vec<f64> = (0..spec.ambient_dim()).map(|_| scale * standard_normal(rng)).collect();
    let mut out = Vec::with_capacity(raw.len());
    for (f, r) in spec.factor_ranges() {
        let (xc, c) = (&x.0[r.clone()], &raw[r]);
        match f {
            Factor::Euclidean(_) => out.extend_from_slice(c),
            Factor::Sphere(_) => out.extend(crate::manifolds::sphere::project_tangent(xc, c)),
            Factor::Spd(n) => {
                let w = spd::project_tangent(n, c);
                out.extend(spd::lift_from_identity(n, xc, &w));
            }
        }
    }
    Tangent::new(x.clone(), out)
}
