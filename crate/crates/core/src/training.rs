//! Datasets, flow-matching losses, AdamW, EMA and the training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::distributions::{rng_from_seed, uniform01, Prior, Rng};
use crate::error::{Error, Result};
use crate::flows::{cfm_path, rcfm_geodesic_path, srfm_path, AugmentedState, FlowParams};
use crate::inference::PolicyConfig;
use crate::manifolds::{ManifoldSpec, Point};
use crate::nnet::{Batch, FlowMode, ModelConfig, Standardizer, VectorFieldModel};

/// One demonstration: observation and action sequences of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct Demo {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Point>,
}

impl Demo {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Demonstrations over an action manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: ManifoldSpec,
    pub obs_dim: usize,
    pub demos: Vec<Demo>,
}

impl Dataset {
    pub fn new(spec: ManifoldSpec, obs_dim: usize, demos: Vec<Demo>) -> Result<Self> {
        let ds = Dataset { spec, obs_dim, demos };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.demos.is_empty() {
            return Err(Error::Config("dataset has no demonstrations".into()));
        }
        for (i, d) in self.demos.iter().enumerate() {
            if d.obs.len() != d.actions.len() {
                return Err(Error::Config(format!("demo {i}: {} observations but {} actions", d.obs.len(), d.actions.len())));
            }
            if let Some(o) = d.obs.iter().find(|o| o.len() != self.obs_dim) {
                return Err(Error::Config(format!("demo {i}: observation of length {} (expected {})", o.len(), self.obs_dim)));
            }
            for a in &d.actions {
                self.spec.check_point(a).map_err(|e| Error::Config(format!("demo {i}: {e}")))?;
            }
        }
        Ok(())
    }

    /// Per-coordinate mean/std of Euclidean action coordinates and of all
    /// observation coordinates. Manifold coordinates keep mean 0, std 1.
    pub fn fit_standardizer(&self) -> Standardizer {
        let ad = self.spec.ambient_dim();
        let mut st = Standardizer::identity(ad, self.obs_dim);
        let euclid: Vec<bool> = {
            let mut m = vec![false; ad];
            for (f, r) in self.spec.factor_ranges() {
                for k in r {
                    m[k] = f.is_euclidean();
                }
            }
            m
        };
        let (mean, std) = moments(self.demos.iter().flat_map(|d| d.actions.iter().map(|a| a.0.as_slice())), ad);
        for k in 0..ad {
            if euclid[k] {
                st.action_mean[k] = mean[k];
                st.action_std[k] = std[k];
            }
        }
        let (mean, std) = moments(self.demos.iter().flat_map(|d| d.obs.iter().map(Vec::as_slice)), self.obs_dim);
        st.obs_mean = mean;
        st.obs_std = std;
        st
    }

    /// Copy with actions and observations mapped through `st`.
    pub fn normalized(&self, st: &Standardizer) -> Dataset {
        let demos = self
            .demos
            .iter()
            .map(|d| Demo {
                obs: d.obs.iter().map(|o| st.normalize_obs(o)).collect(),
                actions: d.actions.iter().map(|a| Point(st.normalize_action(&a.0))).collect(),
            })
            .collect();
        Dataset { spec: self.spec.clone(), obs_dim: self.obs_dim, demos }
    }
}

fn moments<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut mean = vec![0.0; dim];
    for r in rows.clone() {
        n += 1;
        for k in 0..dim {
            mean[k] += r[k];
        }
    }
    if n == 0 {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for r in rows {
        for k in 0..dim {
            var[k] += (r[k] - mean[k]).powi(2);
        }
    }
    let std = var.iter().map(|v| (v / n as f64).sqrt()).map(|s| if s > 1e-8 { s } else { 1.0 }).collect();
    (mean, std)
}

/// Observation-vector length for per-step observations of size `obs_dim`.
pub fn conditioning_dim(obs_dim: usize, policy: &PolicyConfig) -> usize {
    if policy.unconditional {
        0
    } else {
        2 * obs_dim + usize::from(policy.t_o > 2)
    }
}

/// Valid window starts `s` of a demonstration of length `len`.
pub fn window_starts(len: usize, policy: &PolicyConfig) -> std::ops::Range<usize> {
    let lo = if policy.unconditional { 0 } else { policy.t_o };
    if len < policy.t_p || len - policy.t_p < lo {
        return 0..0;
    }
    lo..len - policy.t_p + 1
}

/// Builds the observation vector `[o^{s-1}, o^c, s-c]` from an observation
/// history (the gap is omitted when `T_o = 2`). `history[i]` is `o^i`.
pub fn observation_vector(history: &[Vec<f64>], s: usize, c: usize, t_o: usize) -> Vec<f64> {
    let mut obs = history[s - 1].clone();
    obs.extend_from_slice(&history[c]);
    if t_o > 2 {
        obs.push((s - c) as f64);
    }
    obs
}

/// Stacks `a^s .. a^{s+T_p-1}` into a chunk and samples the conditioning
/// observation with `c` uniform in `[s - T_o, s - 2]`.
pub fn make_training_pair(demo: &Demo, s: usize, t_p: usize, t_o: usize, rng: &mut Rng) -> Result<(Point, Vec<f64>)> {
    if t_o < 2 {
        return Err(Error::Config(format!("observation horizon must be >= 2, got {t_o}")));
    }
    if s < t_o || s + t_p > demo.len() || t_p == 0 {
        return Err(Error::IndexOutOfRange(format!(
            "window s={s}, T_p={t_p}, T_o={t_o} does not fit a demo of length {}",
            demo.len()
        )));
    }
    let c = if t_o == 2 { s - 2 } else { rand::Rng::random_range(rng, s - t_o..=s - 2) };
    Ok((chunk(demo, s, t_p), observation_vector(&demo.obs, s, c, t_o)))
}

fn chunk(demo: &Demo, s: usize, t_p: usize) -> Point {
    Point(demo.actions[s..s + t_p].iter().flat_map(|a| a.0.iter().copied()).collect())
}

/// One regression example before path evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub a0: Point,
    pub a1: Point,
    pub obs: Vec<f64>,
    pub t: f64,
}

/// Evaluates the conditional path of `mode` at each example and collects
/// network inputs and targets.
pub fn assemble_batch(spec: &ManifoldSpec, mode: FlowMode, flow: &FlowParams, examples: &[Example]) -> Result<Batch> {
    let mut batch = Batch::default();
    for ex in examples {
        match mode {
            FlowMode::Rfmp => {
                let (x, u) = if spec.is_euclidean() {
                    cfm_path(spec, ex.t, &ex.a0, &ex.a1, flow)?
                } else {
                    rcfm_geodesic_path(spec, ex.t, &ex.a0, &ex.a1)?
                };
                batch.push(x.0, ex.t, ex.obs.clone(), u.vec, None);
            }
            FlowMode::Srfmp => {
                let xi0 = AugmentedState::new(ex.a0.clone(), flow.tau0);
                let xi1 = AugmentedState::new(ex.a1.clone(), flow.tau1);
                let (xi, u) = srfm_path(spec, ex.t, &xi0, &xi1, flow)?;
                batch.push(xi.spatial.0, xi.tau, ex.obs.clone(), u.spatial.vec, Some(u.tau));
            }
        }
    }
    Ok(batch)
}

/// Mean squared Riemannian norm of `v_t(a_t | o) - u_t(a_t | a_1)` along
/// geodesic (or Gaussian CFM) paths.
pub fn rfmp_loss(model: &VectorFieldModel, examples: &[Example]) -> Result<f64> {
    let batch = assemble_batch(model.chunk_spec(), FlowMode::Rfmp, model.flow_params(), examples)?;
    model.loss(&batch)
}

/// Stable-flow loss: spatial residual in the metric at `a_t` plus the squared
/// `tau` residual.
pub fn srfmp_loss(model: &VectorFieldModel, examples: &[Example], params: &FlowParams) -> Result<f64> {
    let batch = assemble_batch(model.chunk_spec(), FlowMode::Srfmp, params, examples)?;
    model.loss(&batch)
}

fn default_lr() -> f64 {
    1e-4
}
fn default_wd() -> f64 {
    1e-3
}
fn default_ema() -> f64 {
    0.999
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    256
}
fn default_val_fraction() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

/// Optimiser and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_ema")]
    pub ema_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: FlowMode,
    /// Fraction of demonstrations (taken from the end) held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Standardise Euclidean coordinates of actions and observations.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Return the EMA weights (instead of the raw weights) for inference.
    #[serde(default = "default_true")]
    pub use_ema: bool,
    #[serde(default)]
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("train.learning_rate must be > 0");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("train.weight_decay must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad("train.ema_decay must be in [0, 1]");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("train.beta1 and train.beta2 must be in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("train.eps must be > 0");
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("train.val_fraction must be in [0, 1)");
        }
        self.model.validate()
    }
}

/// First and second moment estimates of AdamW.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// One AdamW update in place: decoupled decay `w -= lr * wd * w`, then the
/// bias-corrected adaptive step.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &TrainConfig) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient shapes differ");
    assert_eq!(params.len(), state.m.len(), "optimizer state shape differs");
    state.step += 1;
    let lr = config.learning_rate;
    let c1 = 1.0 - config.beta1.powi(state.step as i32);
    let c2 = 1.0 - config.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        params[i] -= lr * config.weight_decay * params[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + config.eps);
    }
}

/// `ema <- decay * ema + (1 - decay) * model`, elementwise.
pub fn ema_update(ema: &mut [f64], model: &[f64], decay: f64) {
    assert_eq!(ema.len(), model.len(), "EMA shape differs");
    for (e, m) in ema.iter_mut().zip(model) {
        *e = decay * *e + (1.0 - decay) * m;
    }
}

/// One row of the loss history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// NaN when there is no validation split.
    pub val_loss: f64,
}

pub struct TrainOutput {
    /// Raw weights after the last epoch.
    pub model: VectorFieldModel,
    /// Weights for inference: the best-validation EMA snapshot (or the final
    /// EMA without a validation split); raw weights when `use_ema` is off.
    pub ema: VectorFieldModel,
    pub history: Vec<EpochRecord>,
}

/// Loss history as `epoch,mean_loss,val_loss` CSV.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,mean_loss,val_loss\n");
    for r in history {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.mean_loss, r.val_loss));
    }
    s
}

const VAL_SEED_SALT: u64 = 0x0005_eed0_f7a1;

fn sample_examples(
    demos: &[Demo],
    windows: &[(usize, usize)],
    prior: &Prior,
    policy: &PolicyConfig,
    chunk_spec: &ManifoldSpec,
    rng: &mut Rng,
) -> Result<Vec<Example>> {
    windows
        .iter()
        .map(|&(d, s)| {
            let demo = &demos[d];
            let (a1, obs) = if policy.unconditional {
                (chunk(demo, s, policy.t_p), Vec::new())
            } else {
                make_training_pair(demo, s, policy.t_p, policy.t_o, rng)?
            };
            // A prior draw on the cut locus of a1 has probability zero; redraw if it happens.
            let mut a0 = prior.sample_chunk(policy.t_p, rng);
            for _ in 0..8 {
                if chunk_spec.log_map(&a1, &a0).is_ok() {
                    break;
                }
                a0 = prior.sample_chunk(policy.t_p, rng);
            }
            let t = uniform01(rng);
            Ok(Example { a0, a1, obs, t })
        })
        .collect()
}

fn collect_windows(demos: &[Demo], policy: &PolicyConfig) -> Vec<(usize, usize)> {
    demos
        .iter()
        .enumerate()
        .flat_map(|(d, demo)| window_starts(demo.len(), policy).map(move |s| (d, s)))
        .collect()
}

/// Trains a vector field on `dataset`. The prior lives on the action manifold
/// in normalised coordinates.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    policy: &PolicyConfig,
    flow: &FlowParams,
    prior: &Prior,
) -> Result<TrainOutput> {
    config.validate()?;
    policy.validate()?;
    flow.validate()?;
    dataset.validate()?;
    if prior.manifold() != &dataset.spec {
        return Err(Error::SpecMismatch { expected: dataset.spec.to_string(), got: prior.manifold().to_string() });
    }
    let mut rng = rng_from_seed(config.seed);
    let standardizer =
        if config.normalize { dataset.fit_standardizer() } else { Standardizer::identity(dataset.spec.ambient_dim(), dataset.obs_dim) };
    let data = dataset.normalized(&standardizer);
    let n_val = (data.demos.len() as f64 * config.val_fraction).floor() as usize;
    let (train_demos, val_demos) = data.demos.split_at(data.demos.len() - n_val);

    let mut windows = collect_windows(train_demos, policy);
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "no training windows: demonstrations are shorter than T_o + T_p = {}",
            policy.t_o + policy.t_p
        )));
    }
    let val_windows = collect_windows(val_demos, policy);

    let cond_dim = conditioning_dim(dataset.obs_dim, policy);
    let mut model = VectorFieldModel::new(&dataset.spec, policy.t_p, cond_dim, config.mode, *flow, &config.model, &mut rng)?;
    model.set_standardizer(standardizer);
    let chunk_spec = model.chunk_spec().clone();

    let mut params = model.params();
    let mut ema = params.clone();
    let mut adam = AdamState::new(params.len());
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut eval_model = model.clone();

    for epoch in 0..config.epochs {
        windows.shuffle(&mut rng);
        let mut total = 0.0;
        for batch_windows in windows.chunks(config.batch_size) {
            let examples = sample_examples(train_demos, batch_windows, prior, policy, &chunk_spec, &mut rng)?;
            let batch = assemble_batch(&chunk_spec, config.mode, flow, &examples)?;
            let (loss, grad) = model.loss_and_grad(&batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            total += loss * batch.len() as f64;
            adamw_step(&mut params, &grad, &mut adam, config);
            ema_update(&mut ema, &params, config.ema_decay);
            model.set_params(&params)?;
        }
        let mean_loss = total / windows.len() as f64;

        let mut val_loss = f64::NAN;
        if !val_windows.is_empty() {
            let snapshot = if config.use_ema { &ema } else { &params };
            eval_model.set_params(snapshot)?;
            let mut vrng = rng_from_seed(config.seed ^ VAL_SEED_SALT);
            let mut sum = 0.0;
            for w in val_windows.chunks(config.batch_size) {
                let examples = sample_examples(val_demos, w, prior, policy, &chunk_spec, &mut vrng)?;
                let batch = assemble_batch(&chunk_spec, config.mode, flow, &examples)?;
                sum += eval_model.loss(&batch)? * batch.len() as f64;
            }
            val_loss = sum / val_windows.len() as f64;
            if !val_loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
                best = Some((val_loss, snapshot.clone()));
            }
        }
        history.push(EpochRecord { epoch, mean_loss, val_loss });
    }

    let chosen = match best {
        Some((_, p)) => p,
        None if config.use_ema => ema,
        None => params.clone(),
    };
    let mut inference_model = model.clone();
    inference_model.set_params(&chosen)?;
    Ok(TrainOutput { model, ema: inference_model, history })
}
