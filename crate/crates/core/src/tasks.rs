//! Synthetic desk-scale tasks.
//!
//! - 2-D stroke demonstrations (`L`, `S` and a two-mode detour), optionally
//!   lifted to the sphere with an inverse stereographic map.
//! - Noisy samples around a smooth curve on SPD(2).
//! - A closed-loop reach environment in the plane or on the sphere, with
//!   straight-line expert demonstrations.
//!
//! Datasets serialise to a JSON header line followed by a CSV body.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::distributions::{rng_from_seed, standard_normal, tangent_gaussian, Prior, Rng};
use crate::error::{Error, Result};
use crate::inference::{policy_act, IntegratorConfig, PolicyConfig};
use crate::manifolds::{ManifoldSpec, Point};
use crate::nnet::VectorFieldModel;
use crate::training::{Dataset, Demo};

/// Points per stroke demonstration.
pub const STROKE_LEN: usize = 40;
/// Strokes and reach positions live in `[-BOUND, BOUND]^2`.
pub const BOUND: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrokeShape {
    L,
    S,
    TwoMode,
}

/// Planar stroke demonstrations of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct StrokeDataset {
    pub shape: StrokeShape,
    pub noise: f64,
    pub seed: u64,
    pub demos: Vec<Vec<[f64; 2]>>,
}

fn polyline(vertices: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    let seg: Vec<f64> = vertices.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).collect();
    let total: f64 = seg.iter().sum();
    (0..n)
        .map(|i| {
            let mut s = total * i as f64 / (n - 1) as f64;
            for (k, len) in seg.iter().enumerate() {
                if s <= *len || k == seg.len() - 1 {
                    let a = (s / len).min(1.0);
                    let (p, q) = (vertices[k], vertices[k + 1]);
                    return [p[0] + a * (q[0] - p[0]), p[1] + a * (q[1] - p[1])];
                }
                s -= len;
            }
            unreachable!("arc length lies on the polyline")
        })
        .collect()
}

fn base_stroke(shape: StrokeShape, mode: usize) -> Vec<[f64; 2]> {
    let n = STROKE_LEN;
    let u = |i: usize| i as f64 / (n - 1) as f64;
    match shape {
        StrokeShape::L => polyline(&[[-0.6, 0.8], [-0.6, -0.6], [0.6, -0.6]], n),
        StrokeShape::S => (0..n)
            .map(|i| {
                let s = u(i);
                [-0.6 * (2.0 * std::f64::consts::PI * s).sin(), 0.9 - 1.8 * s]
            })
            .collect(),
        StrokeShape::TwoMode => {
            let sign = if mode.is_multiple_of(2) { 1.0 } else { -1.0 };
            (0..n)
                .map(|i| {
                    let s = u(i);
                    [-1.0 + 2.0 * s, sign * 0.8 * (std::f64::consts::PI * s).sin()]
                })
                .collect()
        }
    }
}

/// Reproducible stroke demonstrations. Each demo is the base shape under a
/// random translation and scaling plus a smooth random bump, all
/// proportional to `noise`; `TwoMode` alternates above/below detours between
/// the fixed endpoints `(-1, 0)` and `(1, 0)`.
pub fn gen_strokes(shape: StrokeShape, n_demos: usize, noise: f64, seed: u64) -> Result<StrokeDataset> {
    if n_demos == 0 {
        return Err(Error::Config("n_demos must be >= 1".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config("stroke noise must be >= 0".into()));
    }
    let mut rng = rng_from_seed(seed);
    let demos = (0..n_demos)
        .map(|d| {
            let base = base_stroke(shape, d);
            let shift = [noise * standard_normal(&mut rng), noise * standard_normal(&mut rng)];
            let scale = 1.0 + 0.5 * noise * standard_normal(&mut rng);
            let bump = [noise * standard_normal(&mut rng), noise * standard_normal(&mut rng)];
            let n = base.len();
            base.iter()
                .enumerate()
                .map(|(i, p)| {
                    let w = (std::f64::consts::PI * i as f64 / (n - 1) as f64).sin();
                    let mut q = [0.0; 2];
                    for k in 0..2 {
                        // Two-mode strokes keep their endpoints fixed.
                        let (s, sh) = if shape == StrokeShape::TwoMode { (1.0, 0.0) } else { (scale, shift[k]) };
                        q[k] = (s * p[k] + sh + w * bump[k]).clamp(-BOUND, BOUND);
                    }
                    q
                })
                .collect()
        })
        .collect();
    Ok(StrokeDataset { shape, noise, seed, demos })
}

/// Inverse stereographic map centred at the north pole applied to `p / bound`:
/// `(u, v) -> (2u, 2v, 1 - r^2) / (1 + r^2)`.
pub fn stereographic_to_sphere(p: [f64; 2], bound: f64) -> Point {
    let (u, v) = (p[0] / bound, p[1] / bound);
    let r2 = u * u + v * v;
    let d = 1.0 + r2;
    let mut x = [2.0 * u / d, 2.0 * v / d, (1.0 - r2) / d];
    let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    x.iter_mut().for_each(|c| *c /= n);
    Point(x.to_vec())
}

/// Stereographic projection from the south pole back to the plane, scaled by
/// `bound`.
pub fn sphere_to_stereographic(x: &Point, bound: f64) -> Result<[f64; 2]> {
    let c = x.coords();
    if c.len() != 3 || !(1.0 + c[2] > 1e-12) {
        return Err(Error::Precondition("stereographic chart needs a point of S2 away from the south pole".into()));
    }
    Ok([bound * c[0] / (1.0 + c[2]), bound * c[1] / (1.0 + c[2])])
}

impl StrokeDataset {
    /// Training dataset with observation = action = current position, in the
    /// plane (`R2`) or lifted to `S2`.
    pub fn to_dataset(&self, sphere: bool) -> Dataset {
        let demos = self
            .demos
            .iter()
            .map(|d| {
                let actions: Vec<Point> = d
                    .iter()
                    .map(|p| if sphere { stereographic_to_sphere(*p, BOUND) } else { Point(p.to_vec()) })
                    .collect();
                Demo { obs: actions.iter().map(|a| a.0.clone()).collect(), actions }
            })
            .collect();
        let spec = if sphere { ManifoldSpec::sphere(2) } else { ManifoldSpec::euclidean(2) };
        let obs_dim = spec.ambient_dim();
        Dataset { spec, obs_dim, demos }
    }
}

/// Point on the generating curve of the SPD toy data, `u` in `[0, 1]`:
/// `R(pi u / 2) diag(1.5 + u, 0.5) R(pi u / 2)^T`.
pub fn spd_curve(u: f64) -> Point {
    let th = std::f64::consts::FRAC_PI_2 * u;
    let (s, c) = th.sin_cos();
    let (l1, l2) = (1.5 + u, 0.5);
    let a = c * c * l1 + s * s * l2;
    let b = c * s * (l1 - l2);
    let d = s * s * l1 + c * c * l2;
    Point(vec![a, b, b, d])
}

/// `n` wrapped-Gaussian samples (tangent scale `jitter`) around
/// [`spd_curve`] at uniformly drawn parameters.
pub fn gen_spd_points(n: usize, jitter: f64, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::Config("n must be >= 1".into()));
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::Config("jitter must be >= 0".into()));
    }
    let spec = ManifoldSpec::spd(2);
    let mut rng = rng_from_seed(seed);
    Ok((0..n)
        .map(|_| {
            let mu = spd_curve(rng.random::<f64>());
            if jitter == 0.0 {
                return mu;
            }
            let v = tangent_gaussian(&spec, &mu, jitter, &mut rng);
            Point(spec.exp_unchecked(&mu.0, &v.vec))
        })
        .collect())
}

/// Default-jitter SPD toy data.
pub fn gen_spd_dataset(n: usize, seed: u64) -> Result<Vec<Point>> {
    gen_spd_points(n, 0.05, seed)
}

/// Unconditional dataset with one single-step demo per point.
pub fn points_dataset(spec: ManifoldSpec, points: Vec<Point>) -> Result<Dataset> {
    let demos = points.into_iter().map(|p| Demo { obs: vec![Vec::new()], actions: vec![p] }).collect();
    Dataset::new(spec, 0, demos)
}

fn default_max_steps() -> usize {
    60
}
fn default_tolerance() -> f64 {
    0.05
}
fn default_demo_speed() -> f64 {
    0.08
}

/// Reach environment settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachConfig {
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Success radius (Euclidean or geodesic).
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Agent and goal on S2 (through the stereographic map) instead of R2.
    #[serde(default)]
    pub sphere: bool,
    /// Expert step length of the demonstrations (in the plane).
    #[serde(default = "default_demo_speed")]
    pub demo_speed: f64,
}

impl Default for ReachConfig {
    fn default() -> Self {
        ReachConfig { max_steps: 60, tolerance: 0.05, sphere: false, demo_speed: 0.08 }
    }
}

impl ReachConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || !(self.tolerance > 0.0) || !(self.demo_speed > 0.0) {
            return Err(Error::Config("reach needs max_steps >= 1, tolerance > 0 and demo_speed > 0".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> ManifoldSpec {
        if self.sphere {
            ManifoldSpec::sphere(2)
        } else {
            ManifoldSpec::euclidean(2)
        }
    }
}

/// Closed-loop reach: the agent is commanded to absolute positions and the
/// episode ends at the goal or after `max_steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachEnv {
    pub config: ReachConfig,
    pub agent: Point,
    pub goal: Point,
    pub steps: usize,
    pub done: bool,
    initial_distance: f64,
}

/// Outcome of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub done: bool,
    pub score: f64,
}

fn sample_plane_pair(rng: &mut Rng) -> ([f64; 2], [f64; 2]) {
    loop {
        let mut draw = || [rng.random_range(-1.0f64..1.0), rng.random_range(-1.0f64..1.0)];
        let (a, g) = (draw(), draw());
        if (a[0] - g[0]).hypot(a[1] - g[1]) >= 0.5 {
            return (a, g);
        }
    }
}

impl ReachEnv {
    /// Start and goal drawn from `[-1, 1]^2`, at least 0.5 apart.
    pub fn new(config: ReachConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let (a, g) = sample_plane_pair(&mut rng);
        Self::with_positions(config, a, g)
    }

    /// Environment with explicit planar start and goal (lifted in sphere mode).
    pub fn with_positions(config: ReachConfig, agent: [f64; 2], goal: [f64; 2]) -> Result<Self> {
        let lift = |p: [f64; 2]| if config.sphere { stereographic_to_sphere(p, BOUND) } else { Point(p.to_vec()) };
        let (agent, goal) = (lift(agent), lift(goal));
        let initial_distance = config.spec().distance(&agent, &goal)?;
        Ok(ReachEnv { config, agent, goal, steps: 0, done: false, initial_distance })
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut o = self.agent.0.clone();
        o.extend_from_slice(&self.goal.0);
        o
    }

    pub fn distance_to_goal(&self) -> f64 {
        self.config.spec().distance(&self.agent, &self.goal).unwrap_or(f64::INFINITY)
    }

    pub fn score(&self) -> f64 {
        if self.initial_distance == 0.0 {
            return 1.0;
        }
        1.0 - (self.distance_to_goal() / self.initial_distance).clamp(0.0, 1.0)
    }

    pub fn success(&self) -> bool {
        self.distance_to_goal() <= self.config.tolerance
    }

    /// Moves the agent to the commanded position (clipped to the box in the
    /// plane, projected onto the sphere in sphere mode).
    pub fn step(&mut self, action: &Point) -> Result<StepResult> {
        reach_env_step(self, action)
    }
}

pub fn reach_env_step(env: &mut ReachEnv, action: &Point) -> Result<StepResult> {
    if env.done {
        return Err(Error::Protocol("step called on a finished episode".into()));
    }
    let spec = env.config.spec();
    if action.len() != spec.ambient_dim() {
        return Err(Error::SpecMismatch { expected: spec.to_string(), got: format!("action of length {}", action.len()) });
    }
    env.agent = if env.config.sphere {
        spec.project_to_manifold(&action.0)?
    } else {
        Point(action.0.iter().map(|c| if c.is_finite() { c.clamp(-BOUND, BOUND) } else { 0.0 }).collect())
    };
    env.steps += 1;
    env.done = env.success() || env.steps >= env.config.max_steps;
    Ok(StepResult { obs: env.observation(), done: env.done, score: env.score() })
}

/// Expert demonstration for an environment: the first frame is repeated,
/// then the agent moves in a straight line at `demo_speed` and holds the goal
/// for `pad` more steps. Observations are `[agent, goal]`, actions the
/// agent position at the same step.
pub fn reach_demo(env: &ReachEnv, pad: usize) -> Demo {
    let plane = |p: &Point| -> [f64; 2] {
        if env.config.sphere {
            sphere_to_stereographic(p, BOUND).expect("reach positions avoid the south pole")
        } else {
            [p.0[0], p.0[1]]
        }
    };
    let (a, g) = (plane(&env.agent), plane(&env.goal));
    let dist = (g[0] - a[0]).hypot(g[1] - a[1]);
    let n = (dist / env.config.demo_speed).ceil().max(1.0) as usize;
    let mut path = vec![a, a];
    for k in 1..=n {
        let s = k as f64 / n as f64;
        path.push([a[0] + s * (g[0] - a[0]), a[1] + s * (g[1] - a[1])]);
    }
    path.extend(std::iter::repeat_n(g, pad));
    // Endpoints reuse the environment's own points so the first observation matches exactly.
    let lift = |p: [f64; 2]| {
        if p == a {
            env.agent.clone()
        } else if p == g {
            env.goal.clone()
        } else if env.config.sphere {
            stereographic_to_sphere(p, BOUND)
        } else {
            Point(p.to_vec())
        }
    };
    let goal = env.goal.0.clone();
    let actions: Vec<Point> = path.into_iter().map(lift).collect();
    let obs = actions
        .iter()
        .map(|p| {
            let mut o = p.0.clone();
            o.extend_from_slice(&goal);
            o
        })
        .collect();
    Demo { obs, actions }
}

/// `n_demos` expert demonstrations from environments seeded `seed..seed+n`.
pub fn gen_reach_dataset(config: &ReachConfig, n_demos: usize, pad: usize, seed: u64) -> Result<Dataset> {
    if n_demos == 0 {
        return Err(Error::Config("n_demos must be >= 1".into()));
    }
    let spec = config.spec();
    let obs_dim = 2 * spec.ambient_dim();
    let demos = (0..n_demos as u64)
        .map(|i| ReachEnv::new(config.clone(), seed.wrapping_add(i)).map(|env| reach_demo(&env, pad)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(spec, obs_dim, demos)
}

/// Result of one closed-loop reach episode.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachOutcome {
    /// Executed actions, in order.
    pub actions: Vec<Point>,
    pub success: bool,
    pub score: f64,
    /// Number of chunk generations.
    pub policy_calls: usize,
}

/// Runs `model` in `env` until the episode ends. The history starts with the
/// initial observation twice, like the demonstrations, and each chunk
/// contributes its first `T_a` actions.
pub fn reach_rollout(
    model: &VectorFieldModel,
    env: &mut ReachEnv,
    policy: &PolicyConfig,
    integrator: &IntegratorConfig,
    prior: &Prior,
    rng: &mut Rng,
) -> Result<ReachOutcome> {
    let o = env.observation();
    let mut history = vec![o.clone(), o];
    let mut actions = Vec::new();
    let mut policy_calls = 0;
    while !env.done {
        let chunk = policy_act(model, &history, policy, integrator, prior, rng)?;
        policy_calls += 1;
        for a in chunk {
            let step = env.step(&a)?;
            actions.push(env.agent.clone());
            history.push(step.obs);
            if step.done {
                break;
            }
        }
    }
    Ok(ReachOutcome { actions, success: env.success(), score: env.score(), policy_calls })
}

/// A dataset-generating task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Strokes {
        shape: StrokeShape,
        #[serde(default = "default_n_demos")]
        n_demos: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        sphere: bool,
    },
    Spd {
        #[serde(default = "default_n_points")]
        n: usize,
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
    Reach {
        #[serde(default = "default_n_demos")]
        n_demos: usize,
        #[serde(default = "default_pad")]
        pad: usize,
        #[serde(default)]
        env: ReachConfig,
    },
}

fn default_n_demos() -> usize {
    50
}
fn default_n_points() -> usize {
    100
}
fn default_jitter() -> f64 {
    0.05
}
fn default_pad() -> usize {
    16
}

impl TaskConfig {
    /// Action manifold of the generated data.
    pub fn spec(&self) -> ManifoldSpec {
        match self {
            TaskConfig::Strokes { sphere: true, .. } => ManifoldSpec::sphere(2),
            TaskConfig::Strokes { .. } => ManifoldSpec::euclidean(2),
            TaskConfig::Spd { .. } => ManifoldSpec::spd(2),
            TaskConfig::Reach { env, .. } => env.spec(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Strokes { .. } => "strokes",
            TaskConfig::Spd { .. } => "spd",
            TaskConfig::Reach { .. } => "reach",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskConfig::Strokes { n_demos, noise, .. } => {
                if *n_demos == 0 || !(*noise >= 0.0) {
                    return Err(Error::Config("task.n_demos must be >= 1 and task.noise >= 0".into()));
                }
            }
            TaskConfig::Spd { n, jitter } => {
                if *n == 0 || !(*jitter >= 0.0) {
                    return Err(Error::Config("task.n must be >= 1 and task.jitter >= 0".into()));
                }
            }
            TaskConfig::Reach { n_demos, env, .. } => {
                if *n_demos == 0 {
                    return Err(Error::Config("task.n_demos must be >= 1".into()));
                }
                env.validate()?;
            }
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        self.validate()?;
        match self {
            TaskConfig::Strokes { shape, n_demos, noise, sphere } => Ok(gen_strokes(*shape, *n_demos, *noise, seed)?.to_dataset(*sphere)),
            TaskConfig::Spd { n, jitter } => points_dataset(ManifoldSpec::spd(2), gen_spd_points(*n, *jitter, seed)?),
            TaskConfig::Reach { n_demos, pad, env } => gen_reach_dataset(env, *n_demos, *pad, seed),
        }
    }
}

/// First line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub spec: String,
    pub task: String,
    pub seed: u64,
    pub n_demos: usize,
    pub n_rows: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
}

/// Serialises a dataset: JSON header line, CSV column line, then one row per
/// step `demo_id,step,obs...,action...`.
pub fn dataset_to_string(ds: &Dataset, task: &str, seed: u64) -> String {
    let header = DatasetHeader {
        spec: ds.spec.to_string(),
        task: task.to_string(),
        seed,
        n_demos: ds.demos.len(),
        n_rows: ds.demos.iter().map(Demo::len).sum(),
        obs_dim: ds.obs_dim,
        action_dim: ds.spec.ambient_dim(),
    };
    let mut s = serde_json::to_string(&header).expect("header serialises");
    s.push('\n');
    s.push_str("demo_id,step");
    for k in 0..ds.obs_dim {
        s.push_str(&format!(",o{k}"));
    }
    for k in 0..header.action_dim {
        s.push_str(&format!(",a{k}"));
    }
    s.push('\n');
    for (d, demo) in ds.demos.iter().enumerate() {
        for (i, (o, a)) in demo.obs.iter().zip(&demo.actions).enumerate() {
            s.push_str(&format!("{d},{i}"));
            for v in o.iter().chain(&a.0) {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
    }
    s
}

pub fn save_dataset(path: &Path, ds: &Dataset, task: &str, seed: u64) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(dataset_to_string(ds, task, seed).as_bytes())?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, Dataset)> {
    let f = std::fs::File::open(path)?;
    parse_dataset(BufReader::new(f))
}

pub fn parse_dataset(reader: impl BufRead) -> Result<(DatasetHeader, Dataset)> {
    let mut lines = reader.lines();
    let mut next = |what: &str| -> Result<String> {
        lines.next().ok_or_else(|| Error::Format(format!("dataset ends before {what}")))?.map_err(Error::from)
    };
    let header: DatasetHeader =
        serde_json::from_str(&next("the header")?).map_err(|e| Error::Format(format!("dataset header: {e}")))?;
    let spec: ManifoldSpec = header.spec.parse()?;
    if spec.ambient_dim() != header.action_dim {
        return Err(Error::Format("header action_dim does not match spec".into()));
    }
    let _columns = next("the column line")?;
    let width = 2 + header.obs_dim + header.action_dim;
    let mut demos: Vec<Demo> = Vec::with_capacity(header.n_demos);
    for row_no in 0..header.n_rows {
        let line = next("all rows")?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Format(format!("row {row_no}: expected {width} fields, found {}", fields.len())));
        }
        let bad = |e: String| Error::Format(format!("row {row_no}: {e}"));
        let demo_id: usize = fields[0].parse().map_err(|e| bad(format!("{e}")))?;
        let step: usize = fields[1].parse().map_err(|e| bad(format!("{e}")))?;
        let vals = fields[2..].iter().map(|f| f.parse::<f64>().map_err(|e| bad(format!("{e}")))).collect::<Result<Vec<_>>>()?;
        if demo_id == demos.len() {
            demos.push(Demo { obs: Vec::new(), actions: Vec::new() });
        }
        if demo_id + 1 != demos.len() {
            return Err(bad("demo ids out of order".into()));
        }
        let demo = &mut demos[demo_id];
        if step != demo.len() {
            return Err(bad("steps out of order".into()));
        }
        demo.obs.push(vals[..header.obs_dim].to_vec());
        demo.actions.push(Point(vals[header.obs_dim..].to_vec()));
    }
    if demos.len() != header.n_demos {
        return Err(Error::Format(format!("header announces {} demos, body has {}", header.n_demos, demos.len())));
    }
    let ds = Dataset::new(spec, header.obs_dim, demos).map_err(|e| Error::Format(e.to_string()))?;
    Ok((header, ds))
}

/// The planar positions of stroke demo `d` stacked for plotting checks.
pub fn stroke_midpoints(ds: &StrokeDataset) -> Vec<[f64; 2]> {
    ds.demos.iter().map(|d| d[d.len() / 2]).collect()
}

#[cfg(test)]
mod tests;
