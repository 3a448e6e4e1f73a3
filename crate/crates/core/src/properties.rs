//! Named invariants of every module, runnable as one suite.
//!
//! Each property draws its own random instances from a seed derived from the
//! suite seed and reports the worst observed error against a tolerance. The
//! suite is what `eval-properties` runs; the metric helpers are public so
//! larger acceptance runs can reuse them with their own sizes.
//!
//! A mutation hook replaces the exponential map used by the geometric
//! properties with a deliberately broken one, to check that the suite notices.

use serde::{Deserialize, Serialize};

use crate::distributions::{rng_from_seed, standard_normal, tangent_gaussian, uniform01, Prior, Rng};
use crate::error::{Error, Result};
use crate::flows::{
    cfm_path, lasalle_check, lyapunov_value, rcfm_geodesic_path, sfm_path, srfm_path, stable_field, AugmentedState,
    FlowParams,
};
use crate::inference::{integrate_srfmp, jerkiness, nfe_for_horizon, IntegratorConfig};
use crate::manifolds::{spd, Factor, ManifoldSpec, Point, Tangent};
use crate::nnet::{embed_time, Activation, Batch, FlowMode, ModelConfig, VectorFieldModel};
use crate::tasks::{gen_spd_dataset, sphere_to_stereographic, stereographic_to_sphere, ReachConfig, ReachEnv, BOUND};
use crate::training::{adamw_step, ema_update, make_training_pair, AdamState, Demo, TrainConfig};

/// Manifolds exercised by the geometric properties.
pub const GEOMETRY_SPECS: [&str; 6] = ["R2", "S2", "S3", "SPD2", "SPD3", "R3xS3xR1"];

/// Deliberate defects for mutation testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// `Exp_x(v)` computes `Exp_x(-v)`.
    ExpMapSignFlip,
}

fn default_cases() -> usize {
    100
}

/// Suite settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyConfig {
    /// Random instances per property (per manifold where it applies).
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default)]
    pub mutation: Option<Mutation>,
}

impl Default for PropertyConfig {
    fn default() -> Self {
        PropertyConfig { cases: default_cases(), mutation: None }
    }
}

impl PropertyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cases == 0 {
            return Err(Error::Config("properties.cases must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one property.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub module: String,
    pub passed: bool,
    pub cases: usize,
    /// Largest error seen (violation count for yes/no properties).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

/// Outcome of the whole suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyReport {
    pub seed: u64,
    pub mutation: Option<Mutation>,
    pub passed: usize,
    pub failed: usize,
    pub properties: Vec<PropertyResult>,
}

impl PropertyReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyResult> {
        self.properties.iter().filter(|p| !p.passed)
    }
}

/// Worst error over `cases` checks.
struct Measure {
    cases: usize,
    worst: f64,
    tol: f64,
}

impl Measure {
    fn new(tol: f64) -> Self {
        Measure { cases: 0, worst: 0.0, tol }
    }

    fn record(&mut self, err: f64) {
        self.cases += 1;
        // NaN must count as a failure.
        if err.is_nan() || err > self.worst {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    /// Yes/no case; `worst` counts violations.
    fn check(&mut self, ok: bool) {
        self.cases += 1;
        if !ok {
            self.worst += 1.0;
        }
    }
}

struct Ctx {
    cases: usize,
    mutation: Option<Mutation>,
    rng: Rng,
}

impl Ctx {
    fn exp(&self, spec: &ManifoldSpec, x: &Point, v: &Tangent) -> Result<Point> {
        exp_with(spec, x, v, self.mutation)
    }
}

fn exp_with(spec: &ManifoldSpec, x: &Point, v: &Tangent, mutation: Option<Mutation>) -> Result<Point> {
    match mutation {
        None => spec.exp_map(x, v),
        Some(Mutation::ExpMapSignFlip) => spec.exp_map(x, &v.scaled(-1.0)),
    }
}

fn parse(spec: &str) -> ManifoldSpec {
    spec.parse().expect("built-in manifold string")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A random point from the default prior of `spec`.
pub fn random_point(spec: &ManifoldSpec, rng: &mut Rng) -> Point {
    Prior::default_for(spec).sample(rng)
}

/// A random tangent at `x` whose sphere components stay inside the
/// injectivity radius (intrinsic norm at most 2.5).
pub fn random_tangent(spec: &ManifoldSpec, x: &Point, scale: f64, rng: &mut Rng) -> Tangent {
    let mut v = tangent_gaussian(spec, x, scale, rng);
    for (f, r) in spec.factor_ranges() {
        if let Factor::Sphere(_) = f {
            let n = v.vec[r.clone()].iter().map(|c| c * c).sum::<f64>().sqrt();
            if n > 2.5 {
                v.vec[r].iter_mut().for_each(|c| *c *= 2.5 / n);
            }
        }
    }
    v
}

/// Worst exp/log roundtrip error over `n` random `(x, v)`: the larger of
/// `|Log_x(Exp_x v) - v|` and `|Exp_x(Log_x y) - y|` (max-abs, ambient).
pub fn exp_log_roundtrip_error(spec: &ManifoldSpec, n: usize, seed: u64, mutation: Option<Mutation>) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let x = random_point(spec, &mut rng);
        let v = random_tangent(spec, &x, 0.7, &mut rng);
        let y = exp_with(spec, &x, &v, mutation)?;
        let back = spec.log_map(&x, &y)?;
        worst = worst.max(max_abs_diff(&back.vec, &v.vec));
        let z = random_point(spec, &mut rng);
        let l = spec.log_map(&x, &z)?;
        let again = exp_with(spec, &x, &l, mutation)?;
        worst = worst.max(max_abs_diff(&again.0, &z.0));
    }
    Ok(worst)
}

fn fd_error(
    t: f64,
    h: f64,
    path: impl Fn(f64) -> Result<(Vec<f64>, Vec<f64>)>,
) -> Result<f64> {
    let (_, u) = path(t)?;
    let (xp, _) = path(t + h)?;
    let (xm, _) = path(t - h)?;
    let fd: Vec<f64> = xp.iter().zip(&xm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    Ok(max_abs_diff(&fd, &u))
}

/// Worst gap between central differences (step `1e-5`) of the flow paths and
/// their returned fields, over `n` random triples. Euclidean manifolds check
/// all four paths, others the geodesic and stable Riemannian paths. The
/// stable paths include the temperature coordinate.
pub fn flow_consistency_error(spec: &ManifoldSpec, n: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let x0 = random_point(spec, &mut rng);
        let x1 = random_point(spec, &mut rng);
        let params = FlowParams {
            sigma: 0.1 * uniform01(&mut rng),
            lambda_x: 0.5 + 4.5 * uniform01(&mut rng),
            lambda_tau: 0.5 + 4.5 * uniform01(&mut rng),
            ..FlowParams::default()
        };
        let xi0 = AugmentedState::new(x0.clone(), standard_normal(&mut rng));
        let xi1 = AugmentedState::new(x1.clone(), 1.0);
        let t_unit = 0.05 + 0.9 * uniform01(&mut rng);
        let t_long = 3.0 * uniform01(&mut rng) + 2.0 * h;
        worst = worst.max(fd_error(t_unit, h, |t| {
            rcfm_geodesic_path(spec, t, &x0, &x1).map(|(p, u)| (p.0, u.vec))
        })?);
        let stable = |t: f64, euclid_only: bool| -> Result<(Vec<f64>, Vec<f64>)> {
            let (xi, u) = if euclid_only { sfm_path(spec, t, &xi0, &xi1, &params)? } else { srfm_path(spec, t, &xi0, &xi1, &params)? };
            let mut p = xi.spatial.0;
            p.push(xi.tau);
            let mut v = u.spatial.vec;
            v.push(u.tau);
            Ok((p, v))
        };
        worst = worst.max(fd_error(t_long, h, |t| stable(t, false))?);
        if spec.is_euclidean() {
            worst = worst.max(fd_error(t_unit, h, |t| cfm_path(spec, t, &x0, &x1, &params).map(|(p, u)| (p.0, u.vec)))?);
            worst = worst.max(fd_error(t_long, h, |t| stable(t, true))?);
        }
    }
    Ok(worst)
}

/// Runs `instances` random stable paths (manifolds cycling through
/// [`GEOMETRY_SPECS`]) on a `grid`-point grid over `[0, t_max]` and counts
/// steps where the Lyapunov value grows by more than `slack`. Also returns
/// the largest increase seen.
pub fn lyapunov_violations(instances: usize, grid: usize, t_max: f64, slack: f64, seed: u64) -> Result<(usize, f64)> {
    let mut rng = rng_from_seed(seed);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..instances {
        let spec = parse(GEOMETRY_SPECS[i % GEOMETRY_SPECS.len()]);
        let params = FlowParams {
            lambda_x: 0.5 + 4.5 * uniform01(&mut rng),
            lambda_tau: 0.5 + 4.5 * uniform01(&mut rng),
            ..FlowParams::default()
        };
        let xi0 = AugmentedState::new(random_point(&spec, &mut rng), standard_normal(&mut rng));
        let xi1 = AugmentedState::new(random_point(&spec, &mut rng), 1.0);
        let mut prev = f64::INFINITY;
        for k in 0..grid {
            let t = t_max * k as f64 / (grid - 1).max(1) as f64;
            let (xi, _) = srfm_path(&spec, t, &xi0, &xi1, &params)?;
            let h = lyapunov_value(&spec, &xi, &xi1, &params)?;
            if k > 0 {
                worst = worst.max(h - prev);
                if h > prev + slack {
                    violations += 1;
                }
            }
            prev = h;
        }
    }
    Ok((violations, worst))
}

/// Worst distance to `x1` after one Euler step of size `1/lambda_x` along
/// the exact stable field, over `n` random pairs.
pub fn single_step_error(spec: &ManifoldSpec, n: usize, seed: u64, mutation: Option<Mutation>) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let params = FlowParams::default();
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let xi0 = AugmentedState::new(random_point(spec, &mut rng), 0.0);
        let xi1 = AugmentedState::new(random_point(spec, &mut rng), 1.0);
        let u = stable_field(spec, &xi0, &xi1, &params)?;
        let x = exp_with(spec, &xi0.spatial, &u.spatial.scaled(1.0 / params.lambda_x), mutation)?;
        worst = worst.max(spec.distance(&x, &xi1.spatial)?);
    }
    Ok(worst)
}

/// `|fd - g| / max(|fd|, |g|, 1e-4)`. The floor keeps central-difference
/// roundoff (about 1e-9 at step 1e-6) from dominating tiny components.
pub fn grad_rel_error(analytic: f64, fd: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-4)
}

/// Worst relative error between reverse-mode and central-difference
/// gradients, over every parameter of a width-8 depth-2 model on `spec`
/// (horizon 2, 3 observation inputs, a batch of 6).
pub fn gradient_check_error(spec: &ManifoldSpec, mode: FlowMode, config: &ModelConfig, seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let flow = FlowParams { lambda_x: 4.0, lambda_tau: 2.0, ..FlowParams::default() };
    let mut model = VectorFieldModel::new(spec, 2, 3, mode, flow, config, &mut rng)?;
    let p0: Vec<f64> = (0..model.num_params()).map(|_| 1.2 * uniform01(&mut rng) - 0.6).collect();
    model.set_params(&p0)?;
    let chunk = model.chunk_spec().clone();
    let mut batch = Batch::default();
    for _ in 0..6 {
        let x = random_point(&chunk, &mut rng);
        let target = tangent_gaussian(&chunk, &x, 1.0, &mut rng);
        let obs = (0..3).map(|_| standard_normal(&mut rng)).collect();
        let tau = (mode == FlowMode::Srfmp).then(|| standard_normal(&mut rng));
        batch.push(x.0, uniform01(&mut rng), obs, target.vec, tau);
    }
    let (_, grad) = model.loss_and_grad(&batch)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..p0.len() {
        let mut p = p0.clone();
        p[k] = p0[k] + h;
        model.set_params(&p)?;
        let lp = model.loss(&batch)?;
        p[k] = p0[k] - h;
        model.set_params(&p)?;
        let lm = model.loss(&batch)?;
        worst = worst.max(grad_rel_error(grad[k], (lp - lm) / (2.0 * h)));
    }
    Ok(worst)
}

/// The width-8 depth-2 architecture of the gradient check.
pub fn small_model_config(separate_tau_head: bool, tau_gate: bool) -> ModelConfig {
    ModelConfig {
        hidden: vec![8, 8],
        embedding_dim: 4,
        activation: Activation::Silu,
        separate_tau_head,
        tau_hidden: vec![8],
        tau_gate,
    }
}

type PropertyFn = fn(&mut Ctx) -> Result<Measure>;

fn registry() -> Vec<(&'static str, &'static str, PropertyFn)> {
    vec![
        ("manifolds", "exp_log_roundtrip", exp_log_roundtrip),
        ("manifolds", "exp_of_zero_is_identity", exp_of_zero_is_identity),
        ("manifolds", "distance_symmetric", distance_symmetric),
        ("manifolds", "distance_equals_log_norm", distance_equals_log_norm),
        ("manifolds", "project_to_manifold_idempotent", project_to_manifold_idempotent),
        ("manifolds", "tangent_projection_idempotent", tangent_projection_idempotent),
        ("manifolds", "metric_symmetric_positive", metric_symmetric_positive),
        ("manifolds", "geodesic_endpoints", geodesic_endpoints),
        ("distributions", "prior_samples_on_manifold", prior_samples_on_manifold),
        ("distributions", "prior_seed_determinism", prior_seed_determinism),
        ("distributions", "chunk_prior_is_tiled", chunk_prior_is_tiled),
        ("flows", "flow_path_consistency", flow_path_consistency),
        ("flows", "conditional_path_endpoints", conditional_path_endpoints),
        ("flows", "lyapunov_nonincreasing", lyapunov_nonincreasing),
        ("flows", "lasalle_derivative_nonpositive", lasalle_derivative_nonpositive),
        ("inference", "single_step_convergence", single_step_convergence),
        ("inference", "stable_horizon_robustness", stable_horizon_robustness),
        ("inference", "jerkiness_zero_for_quadratic_motion", jerkiness_zero_for_quadratic_motion),
        ("nnet", "embedding_bounded", embedding_bounded),
        ("nnet", "zero_init_zero_field", zero_init_zero_field),
        ("nnet", "gradient_check", gradient_check),
        ("nnet", "checkpoint_roundtrip_bit_exact", checkpoint_roundtrip_bit_exact),
        ("training", "training_pair_layout", training_pair_layout),
        ("training", "adamw_zero_gradient_decays", adamw_zero_gradient_decays),
        ("training", "ema_convex_combination", ema_convex_combination),
        ("tasks", "stereographic_roundtrip", stereographic_roundtrip),
        ("tasks", "spd_dataset_positive_definite", spd_dataset_positive_definite),
        ("tasks", "reach_env_protocol", reach_env_protocol),
    ]
}

/// Names of all properties in suite order.
pub fn property_names() -> Vec<&'static str> {
    registry().into_iter().map(|(_, n, _)| n).collect()
}

/// Runs every property with instances drawn from `seed`. Errors inside a
/// property count as its failure.
pub fn run_properties(config: &PropertyConfig, seed: u64) -> Result<PropertyReport> {
    config.validate()?;
    let mut properties = Vec::new();
    for (i, (module, name, f)) in registry().into_iter().enumerate() {
        let sub = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
        let mut ctx = Ctx { cases: config.cases, mutation: config.mutation, rng: rng_from_seed(sub) };
        let result = match f(&mut ctx) {
            Ok(m) => {
                let passed = m.worst <= m.tol;
                let detail = if passed { String::new() } else { format!("worst {:e} exceeds tolerance {:e}", m.worst, m.tol) };
                PropertyResult { name: name.into(), module: module.into(), passed, cases: m.cases, worst: m.worst, tolerance: m.tol, detail }
            }
            Err(e) => PropertyResult {
                name: name.into(),
                module: module.into(),
                passed: false,
                cases: 0,
                worst: f64::INFINITY,
                tolerance: 0.0,
                detail: e.to_string(),
            },
        };
        properties.push(result);
    }
    let failed = properties.iter().filter(|p| !p.passed).count();
    Ok(PropertyReport { seed, mutation: config.mutation, passed: properties.len() - failed, failed, properties })
}

fn sub_seed(ctx: &mut Ctx) -> u64 {
    rand::Rng::random(&mut ctx.rng)
}

fn specs() -> impl Iterator<Item = ManifoldSpec> {
    GEOMETRY_SPECS.iter().map(|s| parse(s))
}

fn exp_log_roundtrip(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-8);
    for spec in specs() {
        let seed = sub_seed(ctx);
        m.record(exp_log_roundtrip_error(&spec, ctx.cases, seed, ctx.mutation)?);
    }
    m.cases = ctx.cases * GEOMETRY_SPECS.len();
    Ok(m)
}

fn exp_of_zero_is_identity(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-12);
    for spec in specs() {
        for _ in 0..ctx.cases {
            let x = random_point(&spec, &mut ctx.rng);
            let y = ctx.exp(&spec, &x, &spec.zero_tangent(&x))?;
            m.record(max_abs_diff(&x.0, &y.0));
        }
    }
    Ok(m)
}

fn distance_symmetric(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-9);
    for spec in specs() {
        for _ in 0..ctx.cases {
            let x = random_point(&spec, &mut ctx.rng);
            let y = random_point(&spec, &mut ctx.rng);
            m.record((spec.distance(&x, &y)? - spec.distance(&y, &x)?).abs());
        }
    }
    Ok(m)
}

fn distance_equals_log_norm(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-9);
    for spec in specs() {
        for _ in 0..ctx.cases {
            let x = random_point(&spec, &mut ctx.rng);
            let y = random_point(&spec, &mut ctx.rng);
            m.record((spec.distance(&x, &y)? - spec.norm(&spec.log_map(&x, &y)?)).abs());
        }
    }
    Ok(m)
}

fn project_to_manifold_idempotent(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-10);
    for spec in specs() {
        for _ in 0..ctx.cases {
            let x = random_point(&spec, &mut ctx.rng);
            let raw: Vec<f64> = x.0.iter().map(|c| c + 0.1 * standard_normal(&mut ctx.rng)).collect();
            let p = spec.project_to_manifold(&raw)?;
            spec.check_point(&p)?;
            let q = spec.project_to_manifold(&p.0)?;
            m.record(max_abs_diff(&p.0, &q.0));
        }
    }
    Ok(m)
}

fn tangent_projection_idempotent(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-10);
    for spec in specs() {
        for _ in 0..ctx.cases {
            let x = random_point(&spec, &mut ctx.rng);
            let raw: Vec<f64> = (0..spec.ambient_dim()).map(|_| standard_normal(&mut ctx.rng)).collect();
            let v = spec.project_to_tangent(&x, &raw)?;
            spec.check_tangent(&v)?;
            let w = spec.project_to_tangent(&x, &v.vec)?;
            m.record(max_abs_diff(&v.vec, &w.vec));
        }
    }
    Ok(m)
}

fn metric_symmetric_positive(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-10);
    for spec in specs() {
        for _ in 0..ctx.cases {
            let x = random_point(&spec, &mut ctx.rng);
            let u = tangent_gaussian(&spec, &x, 1.0, &mut ctx.rng);
            let v = tangent_gaussian(&spec, &x, 1.0, &mut ctx.rng);
            let (uv, vu) = (spec.inner(&x, &u, &v)?, spec.inner(&x, &v, &u)?);
            m.record((uv - vu).abs() / uv.abs().max(1.0));
            if !(spec.inner(&x, &u, &u)? > 0.0) {
                m.record(f64::INFINITY);
            }
        }
    }
    Ok(m)
}

fn geodesic_endpoints(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-9);
    for spec in specs() {
        for _ in 0..ctx.cases {
            let x0 = random_point(&spec, &mut ctx.rng);
            let x1 = random_point(&spec, &mut ctx.rng);
            let (a, _) = spec.geodesic(&x0, &x1, 0.0)?;
            let (b, _) = spec.geodesic(&x0, &x1, 1.0)?;
            m.record(max_abs_diff(&a.0, &x0.0));
            m.record(spec.distance(&b, &x1)?);
        }
    }
    Ok(m)
}

fn prior_samples_on_manifold(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(0.0);
    for spec in specs() {
        let prior = Prior::default_for(&spec);
        for x in prior.sample_n(ctx.cases, &mut ctx.rng) {
            m.check(spec.check_point(&x).is_ok());
        }
    }
    Ok(m)
}

fn prior_seed_determinism(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(0.0);
    for spec in specs() {
        let seed = sub_seed(ctx);
        let prior = Prior::default_for(&spec);
        let a = prior.sample_n(ctx.cases, &mut rng_from_seed(seed));
        let b = prior.sample_n(ctx.cases, &mut rng_from_seed(seed));
        m.check(a == b);
    }
    Ok(m)
}

fn chunk_prior_is_tiled(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(0.0);
    for spec in specs() {
        let prior = Prior::default_for(&spec);
        let chunk_spec = spec.power(4);
        for _ in 0..ctx.cases {
            let c = prior.sample_chunk(4, &mut ctx.rng);
            let d = spec.ambient_dim();
            let tiled = c.0.chunks(d).all(|a| a == &c.0[..d]);
            m.check(tiled && chunk_spec.check_point(&c).is_ok());
        }
    }
    Ok(m)
}

fn flow_path_consistency(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-5);
    for spec in specs() {
        let seed = sub_seed(ctx);
        m.record(flow_consistency_error(&spec, ctx.cases, seed)?);
    }
    m.cases = ctx.cases * GEOMETRY_SPECS.len();
    Ok(m)
}

fn conditional_path_endpoints(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-9);
    for spec in specs() {
        for _ in 0..ctx.cases {
            let x0 = random_point(&spec, &mut ctx.rng);
            let x1 = random_point(&spec, &mut ctx.rng);
            let (a, _) = rcfm_geodesic_path(&spec, 0.0, &x0, &x1)?;
            let (b, _) = rcfm_geodesic_path(&spec, 1.0, &x0, &x1)?;
            m.record(spec.distance(&a, &x0)?);
            m.record(spec.distance(&b, &x1)?);
            let xi0 = AugmentedState::new(x0.clone(), 0.0);
            let xi1 = AugmentedState::new(x1.clone(), 1.0);
            let (s, _) = srfm_path(&spec, 0.0, &xi0, &xi1, &FlowParams::default())?;
            m.record(max_abs_diff(&s.spatial.0, &x0.0) + (s.tau - 0.0).abs());
            if spec.is_euclidean() {
                let (c, _) = cfm_path(&spec, 1.0, &x0, &x1, &FlowParams::default())?;
                m.record(max_abs_diff(&c.0, &x1.0));
            }
        }
    }
    Ok(m)
}

fn lyapunov_nonincreasing(ctx: &mut Ctx) -> Result<Measure> {
    let seed = sub_seed(ctx);
    let instances = ctx.cases.max(GEOMETRY_SPECS.len());
    let (violations, _) = lyapunov_violations(instances, 100, 5.0, 1e-12, seed)?;
    Ok(Measure { cases: instances, worst: violations as f64, tol: 0.0 })
}

fn lasalle_derivative_nonpositive(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-12);
    for spec in specs() {
        let params = FlowParams::default();
        for _ in 0..ctx.cases {
            let xi = AugmentedState::new(random_point(&spec, &mut ctx.rng), standard_normal(&mut ctx.rng));
            let xi1 = AugmentedState::new(random_point(&spec, &mut ctx.rng), 1.0);
            let d = lasalle_check(&spec, &xi, &xi1, &params, |s| stable_field(&spec, s, &xi1, &params))?;
            m.record(d.max(0.0));
        }
    }
    Ok(m)
}

fn single_step_convergence(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-10);
    for spec in ["R2", "S2", "SPD2"].map(parse) {
        let seed = sub_seed(ctx);
        m.record(single_step_error(&spec, ctx.cases, seed, ctx.mutation)?);
    }
    m.cases = 3 * ctx.cases;
    Ok(m)
}

fn stable_horizon_robustness(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-8);
    let params = FlowParams::default();
    let eps = 0.1;
    for spec in specs() {
        for _ in 0..ctx.cases.div_ceil(10) {
            let xi0 = AugmentedState::new(random_point(&spec, &mut ctx.rng), 0.0);
            let xi1 = AugmentedState::new(random_point(&spec, &mut ctx.rng), 1.0);
            let end = |t_end: f64| -> Result<AugmentedState> {
                let cfg = IntegratorConfig { nfe: nfe_for_horizon(t_end, &params, eps), refine_step: Some(eps), ..IntegratorConfig::default() };
                let traj = integrate_srfmp(&spec, |xi| stable_field(&spec, xi, &xi1, &params), &xi0, &params, &cfg)?;
                Ok(traj.last().clone())
            };
            let (a, b) = (end(1.0)?, end(2.0)?);
            m.record(spec.distance(&a.spatial, &b.spatial)?);
        }
    }
    Ok(m)
}

fn jerkiness_zero_for_quadratic_motion(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-9);
    let spec = ManifoldSpec::euclidean(2);
    for _ in 0..ctx.cases {
        let c: Vec<f64> = (0..6).map(|_| standard_normal(&mut ctx.rng)).collect();
        let actions: Vec<Point> =
            (0..10).map(|k| k as f64 * 0.1).map(|s| Point(vec![c[0] + c[1] * s + c[2] * s * s, c[3] + c[4] * s + c[5] * s * s])).collect();
        m.record(jerkiness(&spec, &actions, 1.0)?);
    }
    Ok(m)
}

fn embedding_bounded(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(0.0);
    for _ in 0..ctx.cases {
        let t = 200.0 * uniform01(&mut ctx.rng) - 100.0;
        let e = embed_time(t, 32)?;
        m.check(e.len() == 32 && e.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    Ok(m)
}

fn zero_init_zero_field(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(0.0);
    for (spec, mode) in [("S2", FlowMode::Rfmp), ("R3xS3xR1", FlowMode::Srfmp), ("SPD2", FlowMode::Srfmp)] {
        let spec = parse(spec);
        let model = VectorFieldModel::new(&spec, 2, 3, mode, FlowParams::default(), &small_model_config(false, false), &mut ctx.rng)?;
        let chunk = model.chunk_spec().clone();
        for _ in 0..ctx.cases.div_ceil(10) {
            let x = random_point(&chunk, &mut ctx.rng);
            let obs: Vec<f64> = (0..3).map(|_| standard_normal(&mut ctx.rng)).collect();
            m.check(model.forward(&x.0, uniform01(&mut ctx.rng), &obs)?.iter().all(|v| *v == 0.0));
        }
    }
    Ok(m)
}

fn gradient_check(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-4);
    for spec in ["R2", "S2", "SPD2", "R3xS3xR1"].map(parse) {
        for mode in [FlowMode::Rfmp, FlowMode::Srfmp] {
            let seed = sub_seed(ctx);
            m.record(gradient_check_error(&spec, mode, &small_model_config(false, false), seed)?);
        }
    }
    let seed = sub_seed(ctx);
    m.record(gradient_check_error(&parse("S2"), FlowMode::Srfmp, &small_model_config(true, true), seed)?);
    Ok(m)
}

fn checkpoint_roundtrip_bit_exact(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(0.0);
    for (spec, mode, sep) in [("R2", FlowMode::Rfmp, false), ("S2xSPD2", FlowMode::Srfmp, true)] {
        let spec = parse(spec);
        let mut model = VectorFieldModel::new(&spec, 2, 3, mode, FlowParams::default(), &small_model_config(sep, false), &mut ctx.rng)?;
        let p: Vec<f64> = (0..model.num_params()).map(|_| standard_normal(&mut ctx.rng)).collect();
        model.set_params(&p)?;
        let bytes = model.to_bytes();
        let back = VectorFieldModel::from_bytes(&bytes)?;
        let x = random_point(model.chunk_spec(), &mut ctx.rng);
        let same_output = model
            .forward(&x.0, 0.3, &[0.1, 0.2, 0.3])?
            .iter()
            .zip(back.forward(&x.0, 0.3, &[0.1, 0.2, 0.3])?)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        m.check(back == model && back.to_bytes() == bytes && same_output);
    }
    Ok(m)
}

fn training_pair_layout(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(0.0);
    for _ in 0..ctx.cases.div_ceil(10) {
        let actions: Vec<Point> = (0..10).map(|_| Point(vec![standard_normal(&mut ctx.rng), standard_normal(&mut ctx.rng)])).collect();
        let obs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, -(i as f64)]).collect();
        let demo = Demo { obs, actions: actions.clone() };
        let (chunk, o) = make_training_pair(&demo, 3, 4, 2, &mut ctx.rng)?;
        let expect: Vec<f64> = actions[3..7].iter().flat_map(|a| a.0.clone()).collect();
        m.check(chunk.0 == expect && o == vec![2.0, -2.0, 1.0, -1.0]);
    }
    Ok(m)
}

fn adamw_zero_gradient_decays(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-15);
    let config = TrainConfig { learning_rate: 0.01, weight_decay: 0.1, ..TrainConfig::default() };
    for _ in 0..ctx.cases {
        let p0: Vec<f64> = (0..5).map(|_| standard_normal(&mut ctx.rng)).collect();
        let mut p = p0.clone();
        let mut state = AdamState::new(5);
        adamw_step(&mut p, &[0.0; 5], &mut state, &config);
        let expect: Vec<f64> = p0.iter().map(|v| v * (1.0 - 0.01 * 0.1)).collect();
        m.record(max_abs_diff(&p, &expect));
    }
    Ok(m)
}

fn ema_convex_combination(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(0.0);
    for _ in 0..ctx.cases {
        let mut e: Vec<f64> = (0..5).map(|_| standard_normal(&mut ctx.rng)).collect();
        let before = e.clone();
        let w: Vec<f64> = (0..5).map(|_| standard_normal(&mut ctx.rng)).collect();
        let decay = uniform01(&mut ctx.rng);
        ema_update(&mut e, &w, decay);
        let inside = (0..5).all(|i| {
            let (lo, hi) = (before[i].min(w[i]), before[i].max(w[i]));
            e[i] >= lo - 1e-15 && e[i] <= hi + 1e-15
        });
        let mut copy = before.clone();
        ema_update(&mut copy, &w, 0.0);
        m.check(inside && copy == w);
    }
    Ok(m)
}

fn stereographic_roundtrip(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(1e-12);
    let s2 = ManifoldSpec::sphere(2);
    for _ in 0..ctx.cases {
        let p = [BOUND * (2.0 * uniform01(&mut ctx.rng) - 1.0), BOUND * (2.0 * uniform01(&mut ctx.rng) - 1.0)];
        let x = stereographic_to_sphere(p, BOUND);
        s2.check_point(&x)?;
        let q = sphere_to_stereographic(&x, BOUND)?;
        m.record(max_abs_diff(&p, &q));
    }
    Ok(m)
}

fn spd_dataset_positive_definite(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(0.0);
    let seed = sub_seed(ctx);
    for x in gen_spd_dataset(ctx.cases, seed)? {
        m.check(spd::min_eigenvalue(2, &x.0) > 0.0);
    }
    Ok(m)
}

fn reach_env_protocol(ctx: &mut Ctx) -> Result<Measure> {
    let mut m = Measure::new(0.0);
    for sphere in [false, true] {
        let config = ReachConfig { sphere, ..ReachConfig::default() };
        let seed = sub_seed(ctx);
        let mut env = ReachEnv::new(config.clone(), seed)?;
        let goal = env.goal.clone();
        let r = env.step(&goal)?;
        m.check(r.done && env.success() && (r.score - 1.0).abs() < 1e-12);
        m.check(matches!(env.step(&goal), Err(Error::Protocol(_))));
        if !sphere {
            let mut env = ReachEnv::new(config, seed)?;
            env.step(&Point(vec![5.0, -5.0]))?;
            m.check(env.agent.0 == vec![BOUND, -BOUND]);
        }
    }
    Ok(m)
}
