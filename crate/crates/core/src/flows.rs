//! Conditional probability paths and target vector fields.
//!
//! Four constructions are provided:
//!
//! - [`cfm_path`]: Gaussian conditional flow matching on `R^d`,
//!   `x_t = (1 - (1 - sigma) t) x0 + t x1`.
//! - [`rcfm_geodesic_path`]: the geodesic path from `x0` (t = 0) to `x1`
//!   (t = 1), the Riemannian analogue of `cfm_path` with `sigma = 0`.
//! - [`sfm_path`]: the stable autonomous flow on the augmented state
//!   `xi = [x, tau]`, `x_t = x1 + exp(-lambda_x t) (x0 - x1)`.
//! - [`srfm_path`]: its Riemannian generalisation,
//!   `x_t = Exp_{x1}(exp(-lambda_x t) Log_{x1}(x0))`.
//!
//! Target fields are returned as tangents at the current point `x_t`, which
//! is where the regressor is evaluated. For the stable flows that tangent is
//! `lambda_x Log_{x_t}(x1)`, the exact time derivative of the path, and the
//! negative Riemannian gradient of the Lyapunov function
//! `H(xi | xi1) = 1/2 Log_{xi1}(xi)^T A Log_{xi1}(xi)`, `A = diag(lambda_x I, lambda_tau)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::{euclidean_interpolant, Factor, ManifoldSpec, Point, Tangent};

fn default_lambda() -> f64 {
    2.5
}

fn default_tau1() -> f64 {
    1.0
}

/// Flow hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowParams {
    /// Terminal noise level of the Gaussian CFM path.
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_lambda")]
    pub lambda_x: f64,
    #[serde(default = "default_lambda")]
    pub lambda_tau: f64,
    #[serde(default)]
    pub tau0: f64,
    #[serde(default = "default_tau1")]
    pub tau1: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { sigma: 0.0, lambda_x: 2.5, lambda_tau: 2.5, tau0: 0.0, tau1: 1.0 }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.sigma, self.lambda_x, self.lambda_tau, self.tau0, self.tau1]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("flow parameters must be finite".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config("flow.sigma must be >= 0".into()));
        }
        if !(self.lambda_x > 0.0 && self.lambda_tau > 0.0) {
            return Err(Error::Config("flow.lambda_x and flow.lambda_tau must be > 0".into()));
        }
        if !(self.tau0 < self.tau1) {
            return Err(Error::Config("flow.tau0 must be < flow.tau1".into()));
        }
        Ok(())
    }

    /// Diagonal of the stability matrix `A` for a spatial part of `dim`
    /// coordinates (the last entry is the tau weight).
    pub fn stability_diagonal(&self, dim: usize) -> Vec<f64> {
        let mut d = vec![self.lambda_x; dim];
        d.push(self.lambda_tau);
        d
    }
}

/// `xi = [x, tau]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState {
    pub spatial: Point,
    pub tau: f64,
}

impl AugmentedState {
    pub fn new(spatial: Point, tau: f64) -> Self {
        AugmentedState { spatial, tau }
    }
}

/// Tangent to the augmented manifold `M x R` at some `xi`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedTangent {
    pub spatial: Tangent,
    pub tau: f64,
}

fn require_euclidean(spec: &ManifoldSpec, op: &'static str) -> Result<()> {
    if spec.is_euclidean() {
        Ok(())
    } else {
        Err(Error::UnsupportedManifold { op, spec: spec.to_string() })
    }
}

/// Gaussian CFM path and its (time-constant) conditional field.
pub fn cfm_path(spec: &ManifoldSpec, t: f64, x0: &Point, x1: &Point, params: &FlowParams) -> Result<(Point, Tangent)> {
    require_euclidean(spec, "cfm_path")?;
    let (p, v) = euclidean_interpolant(&x0.0, &x1.0, t, params.sigma);
    let p = Point(p);
    Ok((p.clone(), Tangent::new(p, v)))
}

/// Geodesic conditional path `x_t = Exp_{x1}((1 - t) Log_{x1}(x0))` with its
/// velocity at `x_t`.
pub fn rcfm_geodesic_path(spec: &ManifoldSpec, t: f64, x0: &Point, x1: &Point) -> Result<(Point, Tangent)> {
    spec.geodesic(x0, x1, t)
}

/// Exact conditional RCFM field at an arbitrary point `x` and time `t`,
/// defined by the geodesic from `x0` to `x1`.
///
/// Uses `Log_x(x1) / (1 - t)` on the first half of the interval and
/// `-Log_x(x0) / t` afterwards; both agree on the geodesic and neither is
/// singular where it is used.
pub fn rcfm_conditional_field(spec: &ManifoldSpec, x: &Point, t: f64, x0: &Point, x1: &Point) -> Result<Tangent> {
    if t <= 0.5 {
        Ok(spec.log_map(x, x1)?.scaled(1.0 / (1.0 - t)))
    } else {
        Ok(spec.log_map(x, x0)?.scaled(-1.0 / t))
    }
}

fn tau_path(t: f64, tau0: f64, tau1: f64, lambda_tau: f64) -> (f64, f64) {
    let tau = tau1 + (-lambda_tau * t).exp() * (tau0 - tau1);
    (tau, -lambda_tau * (tau - tau1))
}

/// `x_t = x1 + exp(-lambda t)(x0 - x1)`, `u = -lambda (x_t - x1)`.
fn stable_euclidean(x0: &[f64], x1: &[f64], t: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let decay = (-lambda * t).exp();
    let p: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| decay * a + (1.0 - decay) * b).collect();
    let u = p.iter().zip(x1).map(|(a, b)| -lambda * (a - b)).collect();
    (p, u)
}

/// Stable (autonomous) Euclidean flow on the augmented state, defined for
/// every `t >= 0`.
pub fn sfm_path(
    spec: &ManifoldSpec,
    t: f64,
    xi0: &AugmentedState,
    xi1: &AugmentedState,
    params: &FlowParams,
) -> Result<(AugmentedState, AugmentedTangent)> {
    require_euclidean(spec, "sfm_path")?;
    srfm_path(spec, t, xi0, xi1, params)
}

/// Stable Riemannian flow on the augmented state and its field at `xi_t`.
///
/// Euclidean factors use the closed form of [`sfm_path`]; other factors use
/// the geodesic from `x0` to `x1` reparametrised by `s = 1 - exp(-lambda_x t)`,
/// with velocity `lambda_x exp(-lambda_x t) gamma'(s) = lambda_x Log_{x_t}(x1)`.
pub fn srfm_path(
    spec: &ManifoldSpec,
    t: f64,
    xi0: &AugmentedState,
    xi1: &AugmentedState,
    params: &FlowParams,
) -> Result<(AugmentedState, AugmentedTangent)> {
    let (x0, x1) = (&xi0.spatial.0, &xi1.spatial.0);
    let lambda = params.lambda_x;
    let decay = (-lambda * t).exp();
    let mut p = Vec::with_capacity(x0.len());
    let mut u = Vec::with_capacity(x0.len());
    for (f, r) in spec.factor_ranges() {
        let (a, b) = (&x0[r.clone()], &x1[r]);
        if let Factor::Euclidean(_) = f {
            let (pc, uc) = stable_euclidean(a, b, t, lambda);
            p.extend(pc);
            u.extend(uc);
        } else {
            let single = ManifoldSpec::new(vec![f])?;
            let (pc, vc) = single.geodesic(&Point(a.to_vec()), &Point(b.to_vec()), 1.0 - decay)?;
            p.extend(pc.0);
            u.extend(vc.vec.iter().map(|v| lambda * decay * v));
        }
    }
    let (tau, u_tau) = tau_path(t, xi0.tau, xi1.tau, params.lambda_tau);
    let p = Point(p);
    Ok((
        AugmentedState::new(p.clone(), tau),
        AugmentedTangent { spatial: Tangent::new(p, u), tau: u_tau },
    ))
}

/// The stable target field at an arbitrary augmented state:
/// `[lambda_x Log_x(x1), -lambda_tau (tau - tau1)]`.
pub fn stable_field(
    spec: &ManifoldSpec,
    xi: &AugmentedState,
    xi1: &AugmentedState,
    params: &FlowParams,
) -> Result<AugmentedTangent> {
    let mut spatial = spec.log_map(&xi.spatial, &xi1.spatial)?;
    // Euclidean factors: -lambda (x - x1), written the same way as in the path.
    for (f, r) in spec.factor_ranges() {
        for k in r {
            spatial.vec[k] = if f.is_euclidean() {
                -params.lambda_x * (xi.spatial.0[k] - xi1.spatial.0[k])
            } else {
                params.lambda_x * spatial.vec[k]
            };
        }
    }
    Ok(AugmentedTangent { spatial, tau: -params.lambda_tau * (xi.tau - xi1.tau) })
}

/// `H(xi | xi1) = 1/2 (lambda_x d(x, x1)^2 + lambda_tau (tau - tau1)^2)`.
pub fn lyapunov_value(spec: &ManifoldSpec, xi: &AugmentedState, xi1: &AugmentedState, params: &FlowParams) -> Result<f64> {
    let log = spec.log_map(&xi1.spatial, &xi.spatial)?;
    let sq = spec.norm(&log).powi(2);
    let dtau = xi.tau - xi1.tau;
    Ok(0.5 * (params.lambda_x * sq + params.lambda_tau * dtau * dtau))
}

/// Directional derivative `L_u H(xi) = <grad H(xi), u(xi)>` of the Lyapunov
/// function along `field`. Non-positive values certify the LaSalle
/// condition at `xi`; a positive value flags a destabilising field.
pub fn lasalle_check<F>(
    spec: &ManifoldSpec,
    xi: &AugmentedState,
    xi1: &AugmentedState,
    params: &FlowParams,
    field: F,
) -> Result<f64>
where
    F: Fn(&AugmentedState) -> Result<AugmentedTangent>,
{
    let u = field(xi)?;
    if u.spatial.base != xi.spatial {
        return Err(Error::Precondition("field tangent is not based at xi".into()));
    }
    // Riemannian gradient of 1/2 d(x, x1)^2 is -Log_x(x1).
    let grad_x = spec.log_map(&xi.spatial, &xi1.spatial)?.scaled(-params.lambda_x);
    let grad_tau = params.lambda_tau * (xi.tau - xi1.tau);
    Ok(spec.inner_unchecked(&xi.spatial.0, &grad_x.vec, &u.spatial.vec) + grad_tau * u.tau)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

    use proptest::prelude::*;

    use super::*;
    use crate::distributions::{rng_from_seed, Prior};

    fn p(v: &[f64]) -> Point {
        Point(v.to_vec())
    }

    fn aug(v: &[f64], tau: f64) -> AugmentedState {
        AugmentedState::new(p(v), tau)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn sigma(s: f64) -> FlowParams {
        FlowParams { sigma: s, ..FlowParams::default() }
    }

    #[test]
    fn cfm_examples() {
        let r2 = ManifoldSpec::euclidean(2);
        let (x, u) = cfm_path(&r2, 0.25, &p(&[0.0, 0.0]), &p(&[2.0, 4.0]), &sigma(0.0)).unwrap();
        assert_eq!(x.0, vec![0.5, 1.0]);
        assert_eq!(u.vec, vec![2.0, 4.0]);
        let (x, _) = cfm_path(&r2, 1.0, &p(&[0.3, -7.0]), &p(&[2.0, 4.0]), &sigma(0.0)).unwrap();
        assert_eq!(x.0, vec![2.0, 4.0]);
        // (1 - 0.9 * 1) * (1, 0) + 1 * (0, 0) = (0.1, 0); u = 0 - 0.9 * (1, 0)
        let (x, u) = cfm_path(&r2, 1.0, &p(&[1.0, 0.0]), &p(&[0.0, 0.0]), &sigma(0.1)).unwrap();
        assert!(close(&x.0, &[0.1, 0.0], 1e-15));
        assert!(close(&u.vec, &[-0.9, 0.0], 1e-15));
        let s2 = ManifoldSpec::sphere(2);
        let err = cfm_path(&s2, 0.5, &p(&[1.0, 0.0, 0.0]), &p(&[0.0, 1.0, 0.0]), &sigma(0.0));
        assert!(matches!(err, Err(Error::UnsupportedManifold { .. })));
    }

    #[test]
    fn rcfm_examples() {
        let s2 = ManifoldSpec::sphere(2);
        let (x, _) = rcfm_geodesic_path(&s2, 0.5, &p(&[1.0, 0.0, 0.0]), &p(&[0.0, 1.0, 0.0])).unwrap();
        assert!(close(&x.0, &[FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0], 1e-15));

        // Diagonal SPD geodesic is elementwise geometric interpolation: sqrt(4) = 2.
        let spd2 = ManifoldSpec::spd(2);
        let (x, _) = rcfm_geodesic_path(&spd2, 0.5, &p(&[1.0, 0.0, 0.0, 1.0]), &p(&[4.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(close(&x.0, &[2.0, 0.0, 0.0, 1.0], 1e-14));

        let err = rcfm_geodesic_path(&s2, 0.5, &p(&[1.0, 0.0, 0.0]), &p(&[-1.0, 0.0, 0.0]));
        assert!(matches!(err, Err(Error::CutLocus(_))));
    }

    #[test]
    fn sfm_examples() {
        let r1 = ManifoldSpec::euclidean(1);
        let params = FlowParams::default();
        let (xi, u) = sfm_path(&r1, 0.4, &aug(&[0.0], 0.0), &aug(&[1.0], 1.0), &params).unwrap();
        assert!((xi.spatial.0[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((xi.spatial.0[0] - 0.632121).abs() < 1e-6);
        assert!((u.spatial.vec[0] - 2.5 * (-1.0f64).exp()).abs() < 1e-15);

        let xi0 = aug(&[0.3, -2.0], 0.0);
        let (xi, _) = sfm_path(&ManifoldSpec::euclidean(2), 0.0, &xi0, &aug(&[1.0, 1.0], 1.0), &params).unwrap();
        assert_eq!(xi, xi0);

        let (xi, _) = sfm_path(&r1, 20.0, &aug(&[0.0], 0.0), &aug(&[1.0], 1.0), &params).unwrap();
        assert!((xi.spatial.0[0] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn srfm_examples() {
        let s2 = ManifoldSpec::sphere(2);
        let params = FlowParams::default();
        let xi0 = aug(&[1.0, 0.0, 0.0], 0.0);
        let xi1 = aug(&[0.0, 1.0, 0.0], 1.0);
        let (xi, _) = srfm_path(&s2, 0.0, &xi0, &xi1, &params).unwrap();
        assert_eq!(xi.spatial, xi0.spatial);

        let (xi, u) = srfm_path(&s2, 0.4, &xi0, &xi1, &params).unwrap();
        let angle = s2.distance(&xi.spatial, &xi1.spatial).unwrap();
        assert!((angle - FRAC_PI_2 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((angle - 0.5778).abs() < 1e-4);
        // Exp_{x1}(e^-1 Log_{x1}(x0)) evaluated directly.
        let log = s2.log_map(&xi1.spatial, &xi0.spatial).unwrap();
        let direct = s2.exp_map(&xi1.spatial, &log.scaled((-1.0f64).exp())).unwrap();
        assert!(close(&direct.0, &xi.spatial.0, 1e-12));
        // Field is lambda Log_{x_t}(x1).
        let expect = s2.log_map(&xi.spatial, &xi1.spatial).unwrap().scaled(2.5);
        assert!(close(&u.spatial.vec, &expect.vec, 1e-12));
    }

    #[test]
    fn srfm_reparametrizes_rcfm() {
        let params = FlowParams::default();
        let mut rng = rng_from_seed(4);
        for s in ["S2", "SPD2", "R3", "R3xS3xR1"] {
            let spec: ManifoldSpec = s.parse().unwrap();
            let prior = Prior::default_for(&spec);
            for _ in 0..20 {
                let (x0, x1) = (prior.sample(&mut rng), prior.sample(&mut rng));
                let t = 2.0 * crate::distributions::uniform01(&mut rng);
                let s = 1.0 - (-params.lambda_x * t).exp();
                let (xi, _) = srfm_path(&spec, t, &aug(&x0.0, 0.0), &aug(&x1.0, 1.0), &params).unwrap();
                let (x, _) = rcfm_geodesic_path(&spec, s, &x0, &x1).unwrap();
                assert!(close(&xi.spatial.0, &x.0, 1e-10));
            }
        }
    }

    #[test]
    fn euclidean_degeneration_is_exact() {
        let params = FlowParams::default();
        let spec = ManifoldSpec::euclidean(3);
        let prior = Prior::default_for(&spec);
        let mut rng = rng_from_seed(8);
        for _ in 0..100 {
            let (x0, x1) = (prior.sample(&mut rng), prior.sample(&mut rng));
            let t = crate::distributions::uniform01(&mut rng);
            let a = rcfm_geodesic_path(&spec, t, &x0, &x1).unwrap();
            let b = cfm_path(&spec, t, &x0, &x1, &sigma(0.0)).unwrap();
            assert_eq!(a, b);
            let (xi0, xi1) = (aug(&x0.0, 0.0), aug(&x1.0, 1.0));
            let a = srfm_path(&spec, 3.0 * t, &xi0, &xi1, &params).unwrap();
            let b = sfm_path(&spec, 3.0 * t, &xi0, &xi1, &params).unwrap();
            assert_eq!(a, b);
            let field = stable_field(&spec, &a.0, &xi1, &params).unwrap();
            assert_eq!(field, a.1);
        }
    }

    #[test]
    fn lyapunov_examples() {
        let params = FlowParams::default();
        let r2 = ManifoldSpec::euclidean(2);
        let xi1 = aug(&[0.5, -0.5], 1.0);
        assert_eq!(lyapunov_value(&r2, &xi1, &xi1, &params).unwrap(), 0.0);
        let xi = aug(&[1.5, -0.5], 1.0);
        assert!((lyapunov_value(&r2, &xi, &xi1, &params).unwrap() - 1.25).abs() < 1e-15);

        let s2 = ManifoldSpec::sphere(2);
        let h = lyapunov_value(&s2, &aug(&[1.0, 0.0, 0.0], 1.0), &aug(&[0.0, 1.0, 0.0], 1.0), &params).unwrap();
        assert!((h - 0.5 * 2.5 * FRAC_PI_2 * FRAC_PI_2).abs() < 1e-12);
        assert!((h - 3.0843).abs() < 1e-4);
    }

    #[test]
    fn lasalle_examples() {
        let params = FlowParams::default();
        let r2 = ManifoldSpec::euclidean(2);
        let xi1 = aug(&[0.5, -0.5], 1.0);
        let exact = |xi: &AugmentedState| stable_field(&r2, xi, &xi1, &params);
        assert_eq!(lasalle_check(&r2, &xi1, &xi1, &params, exact).unwrap(), 0.0);
        let xi = aug(&[1.5, -0.5], 1.0);
        let d = lasalle_check(&r2, &xi, &xi1, &params, exact).unwrap();
        assert!((d + 6.25).abs() < 1e-12);
        let outward = |xi: &AugmentedState| {
            let log = r2.log_map(&xi1.spatial, &xi.spatial)?;
            Ok(AugmentedTangent {
                spatial: Tangent::new(xi.spatial.clone(), log.scaled(params.lambda_x).vec),
                tau: params.lambda_tau * (xi.tau - xi1.tau),
            })
        };
        let d = lasalle_check(&r2, &xi, &xi1, &params, outward).unwrap();
        assert!((d - 6.25).abs() < 1e-12);
    }

    #[test]
    fn lasalle_matches_closed_form_on_manifolds() {
        let params = FlowParams { lambda_x: 1.7, lambda_tau: 3.0, ..FlowParams::default() };
        let mut rng = rng_from_seed(21);
        for s in ["S2", "SPD2", "R3xS3xR1"] {
            let spec: ManifoldSpec = s.parse().unwrap();
            let prior = Prior::default_for(&spec);
            for _ in 0..20 {
                let xi = aug(&prior.sample(&mut rng).0, 0.3);
                let xi1 = aug(&prior.sample(&mut rng).0, 1.0);
                let d = lasalle_check(&spec, &xi, &xi1, &params, |x| stable_field(&spec, x, &xi1, &params)).unwrap();
                let dist = spec.distance(&xi.spatial, &xi1.spatial).unwrap();
                let expect = -(params.lambda_x.powi(2) * dist * dist + params.lambda_tau.powi(2) * 0.49);
                assert!((d - expect).abs() < 1e-9 * (1.0 + expect.abs()), "{d} vs {expect}");
            }
        }
    }

    /// Central difference `(Log_{x_t}(x_{t+h}) - Log_{x_t}(x_{t-h})) / 2h`.
    fn fd_velocity(spec: &ManifoldSpec, at: &Point, plus: &Point, minus: &Point, h: f64) -> Vec<f64> {
        let a = spec.log_map(at, plus).unwrap().vec;
        let b = spec.log_map(at, minus).unwrap().vec;
        a.iter().zip(&b).map(|(p, m)| (p - m) / (2.0 * h)).collect()
    }

    #[test]
    fn finite_differences_match_fields() {
        let h = 1e-5;
        let params = FlowParams { sigma: 0.1, ..FlowParams::default() };
        let mut rng = rng_from_seed(12);
        for s in ["R2", "S2", "S3", "SPD2", "R3xS3xR1"] {
            let spec: ManifoldSpec = s.parse().unwrap();
            let prior = Prior::default_for(&spec);
            for _ in 0..100 {
                let (x0, x1) = (prior.sample(&mut rng), prior.sample(&mut rng));
                let t = 0.01 + 0.98 * crate::distributions::uniform01(&mut rng);
                if spec.is_euclidean() {
                    let (xt, u) = cfm_path(&spec, t, &x0, &x1, &params).unwrap();
                    let (xp, _) = cfm_path(&spec, t + h, &x0, &x1, &params).unwrap();
                    let (xm, _) = cfm_path(&spec, t - h, &x0, &x1, &params).unwrap();
                    assert!(close(&fd_velocity(&spec, &xt, &xp, &xm, h), &u.vec, 1e-5));
                    let (xi0, xi1) = (aug(&x0.0, 0.0), aug(&x1.0, 1.0));
                    let (xt, u) = sfm_path(&spec, t, &xi0, &xi1, &params).unwrap();
                    let (xp, _) = sfm_path(&spec, t + h, &xi0, &xi1, &params).unwrap();
                    let (xm, _) = sfm_path(&spec, t - h, &xi0, &xi1, &params).unwrap();
                    assert!(close(&fd_velocity(&spec, &xt.spatial, &xp.spatial, &xm.spatial, h), &u.spatial.vec, 1e-5));
                    assert!(((xp.tau - xm.tau) / (2.0 * h) - u.tau).abs() < 1e-5);
                }
                let (xt, u) = rcfm_geodesic_path(&spec, t, &x0, &x1).unwrap();
                let (xp, _) = rcfm_geodesic_path(&spec, t + h, &x0, &x1).unwrap();
                let (xm, _) = rcfm_geodesic_path(&spec, t - h, &x0, &x1).unwrap();
                let fd = fd_velocity(&spec, &xt, &xp, &xm, h);
                assert!(close(&fd, &u.vec, 1e-5), "{s} rcfm {fd:?} vs {:?}", u.vec);

                let (xi0, xi1) = (aug(&x0.0, 0.0), aug(&x1.0, 1.0));
                let (xt, u) = srfm_path(&spec, t, &xi0, &xi1, &params).unwrap();
                let (xp, _) = srfm_path(&spec, t + h, &xi0, &xi1, &params).unwrap();
                let (xm, _) = srfm_path(&spec, t - h, &xi0, &xi1, &params).unwrap();
                let fd = fd_velocity(&spec, &xt.spatial, &xp.spatial, &xm.spatial, h);
                assert!(close(&fd, &u.spatial.vec, 1e-5), "{s} srfm {fd:?} vs {:?}", u.spatial.vec);
                assert!(((xp.tau - xm.tau) / (2.0 * h) - u.tau).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conditional_field_follows_geodesic() {
        let mut rng = rng_from_seed(30);
        let spec = ManifoldSpec::sphere(2);
        let prior = Prior::default_for(&spec);
        for _ in 0..20 {
            let (x0, x1) = (prior.sample(&mut rng), prior.sample(&mut rng));
            for t in [0.1, 0.5, 0.7, 0.95] {
                let (xt, u) = rcfm_geodesic_path(&spec, t, &x0, &x1).unwrap();
                let f = rcfm_conditional_field(&spec, &xt, t, &x0, &x1).unwrap();
                assert!(close(&f.vec, &u.vec, 1e-9));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn lyapunov_strictly_decreasing(seed in 0u64..10_000, which in 0usize..3) {
            let spec: ManifoldSpec = ["S2", "SPD2", "R3xS3xR1"][which].parse().unwrap();
            let prior = Prior::default_for(&spec);
            let mut rng = rng_from_seed(seed);
            let params = FlowParams::default();
            let xi0 = aug(&prior.sample(&mut rng).0, 0.0);
            let xi1 = aug(&prior.sample(&mut rng).0, 1.0);
            let mut prev = f64::INFINITY;
            for k in 0..100 {
                let t = 5.0 * k as f64 / 99.0;
                let (xi, _) = srfm_path(&spec, t, &xi0, &xi1, &params).unwrap();
                let h = lyapunov_value(&spec, &xi, &xi1, &params).unwrap();
                if prev < 1e-12 {
                    break;
                }
                prop_assert!(h < prev, "H rose from {} to {} at t={}", prev, h, t);
                prev = h;
            }
        }

        #[test]
        fn rcfm_hits_endpoints(seed in 0u64..10_000) {
            let spec: ManifoldSpec = "S3xSPD2".parse().unwrap();
            let prior = Prior::default_for(&spec);
            let mut rng = rng_from_seed(seed);
            let (x0, x1) = (prior.sample(&mut rng), prior.sample(&mut rng));
            let (a, _) = rcfm_geodesic_path(&spec, 0.0, &x0, &x1).unwrap();
            let (b, _) = rcfm_geodesic_path(&spec, 1.0, &x0, &x1).unwrap();
            prop_assert!(spec.distance(&a, &x0).unwrap() <= 1e-9);
            prop_assert!(spec.distance(&b, &x1).unwrap() <= 1e-9);
        }
    }
}
