//! Projected Euler integration, the stable step schedule and the
//! receding-horizon policy.
//!
//! Every step maps the (projected) field through the exponential map, so the
//! iterates stay on the manifold by construction.

use serde::{Deserialize, Serialize};

use crate::distributions::{Prior, Rng};
use crate::error::{Error, Result};
use crate::flows::{AugmentedState, AugmentedTangent, FlowParams};
use crate::manifolds::{ManifoldSpec, Point, Tangent};
use crate::nnet::{FlowMode, VectorFieldModel};
use crate::training::observation_vector;

fn default_t_p() -> usize {
    16
}
fn default_t_a() -> usize {
    8
}
fn default_t_o() -> usize {
    2
}

/// Receding-horizon settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Prediction horizon `T_p`.
    #[serde(default = "default_t_p")]
    pub t_p: usize,
    /// Action horizon `T_a`.
    #[serde(default = "default_t_a")]
    pub t_a: usize,
    /// Observation horizon `T_o`.
    #[serde(default = "default_t_o")]
    pub t_o: usize,
    /// Learn the marginal action distribution with no observation input.
    #[serde(default)]
    pub unconditional: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { t_p: 16, t_a: 8, t_o: 2, unconditional: false }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.t_a && self.t_a <= self.t_p) {
            return Err(Error::Config(format!("policy needs 1 <= t_a <= t_p, got t_a={} t_p={}", self.t_a, self.t_p)));
        }
        if self.t_o < 2 {
            return Err(Error::Config(format!("policy.t_o must be >= 2, got {}", self.t_o)));
        }
        Ok(())
    }
}

fn default_nfe() -> usize {
    10
}
fn default_t_end() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

/// ODE solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Number of field evaluations `N`.
    #[serde(default = "default_nfe")]
    pub nfe: usize,
    /// Integration horizon `T`.
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Stable mode: first step `1 / lambda_x`, then `N - 1` equal refinement
    /// steps towards `T`.
    #[serde(default = "default_true")]
    pub srfmp_first_step: bool,
    /// Fixed refinement step. When set, `T` is ignored in stable mode and the
    /// horizon is `1/lambda_x + (N - 1) * refine_step`.
    #[serde(default)]
    pub refine_step: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { nfe: 10, t_end: 1.0, srfmp_first_step: true, refine_step: None }
    }
}

impl IntegratorConfig {
    pub fn uniform(nfe: usize, t_end: f64) -> Self {
        IntegratorConfig { nfe, t_end, srfmp_first_step: false, refine_step: None }
    }

    pub fn validate(&self, params: &FlowParams) -> Result<()> {
        if self.nfe == 0 {
            return Err(Error::Config("integrator.nfe must be >= 1".into()));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config("integrator.t_end must be > 0".into()));
        }
        if let Some(eps) = self.refine_step {
            if !(eps > 0.0 && eps <= 1.0 / params.lambda_x) {
                return Err(Error::Config("integrator.refine_step must be in (0, 1/lambda_x]".into()));
            }
        }
        Ok(())
    }

    /// Refinement step of the stable schedule: `refine_step` if set, else
    /// `(T - 1/lambda_x) / (N - 1)` capped at `1/lambda_x`, so small budgets
    /// stop short of `T` (zero when the first step already reaches it).
    pub fn refine(&self, params: &FlowParams) -> f64 {
        match self.refine_step {
            Some(eps) => eps,
            None if self.nfe > 1 => {
                ((self.t_end - 1.0 / params.lambda_x) / (self.nfe - 1) as f64).clamp(0.0, 1.0 / params.lambda_x)
            }
            None => 0.0,
        }
    }

    /// Step sizes for a flow of the given mode.
    pub fn schedule(&self, mode: FlowMode, params: &FlowParams) -> Vec<f64> {
        if mode == FlowMode::Srfmp && self.srfmp_first_step {
            let mut s = vec![1.0 / params.lambda_x];
            s.extend(std::iter::repeat_n(self.refine(params), self.nfe - 1));
            s
        } else {
            vec![self.t_end / self.nfe as f64; self.nfe]
        }
    }
}

/// Smallest stable-schedule step budget whose end time reaches `t_end`:
/// `1 + ceil((t_end - 1/lambda_x) / eps)`.
pub fn nfe_for_horizon(t_end: f64, params: &FlowParams, refine_step: f64) -> usize {
    let rest = t_end - 1.0 / params.lambda_x;
    if rest <= 0.0 {
        1
    } else {
        1 + (rest / refine_step - 1e-9).ceil() as usize
    }
}

/// States with the time at which each was reached.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
}

impl<S> Trajectory<S> {
    pub fn last(&self) -> &S {
        self.states.last().expect("trajectories hold the initial state")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// `x_{k+1} = Exp_{x_k}(dt v(x_k, t_k))` with `N` steps of size `T / N`.
pub fn integrate_projected_euler<F>(spec: &ManifoldSpec, mut field: F, x0: &Point, config: &IntegratorConfig) -> Result<Trajectory<Point>>
where
    F: FnMut(&Point, f64) -> Result<Tangent>,
{
    let dts = vec![config.t_end / config.nfe.max(1) as f64; config.nfe];
    integrate_steps(spec, &mut field, x0, &dts)
}

fn integrate_steps<F>(spec: &ManifoldSpec, field: &mut F, x0: &Point, dts: &[f64]) -> Result<Trajectory<Point>>
where
    F: FnMut(&Point, f64) -> Result<Tangent>,
{
    let mut t = 0.0;
    let mut x = x0.clone();
    let mut traj = Trajectory { times: vec![0.0], states: vec![x.clone()] };
    for (k, &dt) in dts.iter().enumerate() {
        let v = field(&x, t)?;
        if !finite(&v.vec) {
            return Err(Error::Diverged { step: k });
        }
        let v = spec.project_tangent_unchecked(&x.0, &v.vec);
        let step: Vec<f64> = v.iter().map(|c| c * dt).collect();
        x = Point(spec.exp_unchecked(&x.0, &step));
        if !finite(&x.0) {
            return Err(Error::Diverged { step: k });
        }
        t += dt;
        traj.times.push(t);
        traj.states.push(x.clone());
    }
    Ok(traj)
}

/// Integrates an autonomous field on `M x R` with the stable schedule: a
/// first step `1/lambda_x`, then `N - 1` refinement steps.
pub fn integrate_srfmp<F>(
    spec: &ManifoldSpec,
    field: F,
    xi0: &AugmentedState,
    params: &FlowParams,
    config: &IntegratorConfig,
) -> Result<Trajectory<AugmentedState>>
where
    F: FnMut(&AugmentedState) -> Result<AugmentedTangent>,
{
    integrate_augmented(spec, field, xi0, &config.schedule(FlowMode::Srfmp, params))
}

/// Euler on `M x R` with explicit step sizes.
pub fn integrate_augmented<F>(spec: &ManifoldSpec, mut field: F, xi0: &AugmentedState, dts: &[f64]) -> Result<Trajectory<AugmentedState>>
where
    F: FnMut(&AugmentedState) -> Result<AugmentedTangent>,
{
    let mut t = 0.0;
    let mut xi = xi0.clone();
    let mut traj = Trajectory { times: vec![0.0], states: vec![xi.clone()] };
    for (k, &dt) in dts.iter().enumerate() {
        let u = field(&xi)?;
        if !finite(&u.spatial.vec) || !u.tau.is_finite() {
            return Err(Error::Diverged { step: k });
        }
        let v = spec.project_tangent_unchecked(&xi.spatial.0, &u.spatial.vec);
        let step: Vec<f64> = v.iter().map(|c| c * dt).collect();
        let x = Point(spec.exp_unchecked(&xi.spatial.0, &step));
        let tau = xi.tau + dt * u.tau;
        if !finite(&x.0) || !tau.is_finite() {
            return Err(Error::Diverged { step: k });
        }
        xi = AugmentedState::new(x, tau);
        t += dt;
        traj.times.push(t);
        traj.states.push(xi.clone());
    }
    Ok(traj)
}

/// Integrates the learned field from a tiled prior draw. `cond` is the
/// (already normalised) observation vector. States are returned in
/// normalised coordinates.
pub fn generate_normalized(
    model: &VectorFieldModel,
    cond: &[f64],
    prior: &Prior,
    integrator: &IntegratorConfig,
    rng: &mut Rng,
) -> Result<Trajectory<Point>> {
    let flow = *model.flow_params();
    integrator.validate(&flow)?;
    let spec = model.chunk_spec();
    let a0 = prior.sample_chunk(model.layout().horizon, rng);
    let dts = integrator.schedule(model.mode(), &flow);
    match model.mode() {
        FlowMode::Rfmp => integrate_steps(spec, &mut |x: &Point, t| Ok(model.field(x, t, cond)?.0), &a0, &dts),
        FlowMode::Srfmp => {
            let xi0 = AugmentedState::new(a0, flow.tau0);
            let traj = integrate_augmented(
                spec,
                |xi: &AugmentedState| {
                    let (spatial, tau) = model.field(&xi.spatial, xi.tau, cond)?;
                    Ok(AugmentedTangent { spatial, tau })
                },
                &xi0,
                &dts,
            )?;
            Ok(Trajectory { times: traj.times, states: traj.states.into_iter().map(|s| s.spatial).collect() })
        }
    }
}

/// [`generate_normalized`] with every state mapped back to data coordinates.
pub fn generate(
    model: &VectorFieldModel,
    cond: &[f64],
    prior: &Prior,
    integrator: &IntegratorConfig,
    rng: &mut Rng,
) -> Result<Trajectory<Point>> {
    let mut traj = generate_normalized(model, cond, prior, integrator, rng)?;
    for s in &mut traj.states {
        s.0 = model.standardizer().denormalize_action(&s.0);
    }
    Ok(traj)
}

/// Normalised observation vector from the most recent two raw observations.
pub fn policy_observation(model: &VectorFieldModel, history: &[Vec<f64>], policy: &PolicyConfig) -> Result<Vec<f64>> {
    if policy.unconditional {
        return Ok(Vec::new());
    }
    if history.len() < 2 {
        return Err(Error::Precondition(format!("policy warm-up needs 2 observations, history holds {}", history.len())));
    }
    let s = history.len();
    let recent: Vec<Vec<f64>> = history.iter().map(|o| model.standardizer().normalize_obs(o)).collect();
    Ok(observation_vector(&recent, s, s - 2, policy.t_o))
}

/// Generates one chunk conditioned on `history` and returns its first `T_a`
/// actions in data coordinates.
pub fn policy_act(
    model: &VectorFieldModel,
    history: &[Vec<f64>],
    policy: &PolicyConfig,
    integrator: &IntegratorConfig,
    prior: &Prior,
    rng: &mut Rng,
) -> Result<Vec<Point>> {
    policy.validate()?;
    if model.layout().horizon != policy.t_p {
        return Err(Error::Config(format!("model horizon {} differs from policy.t_p {}", model.layout().horizon, policy.t_p)));
    }
    let cond = policy_observation(model, history, policy)?;
    let traj = generate(model, &cond, prior, integrator, rng)?;
    let d = model.action_spec().ambient_dim();
    Ok(traj.last().0.chunks(d).take(policy.t_a).map(|a| Point(a.to_vec())).collect())
}

/// Mean squared third difference of the Euclidean coordinates, over `dt^6`.
pub fn jerkiness(spec: &ManifoldSpec, actions: &[Point], dt: f64) -> Result<f64> {
    if actions.len() < 4 {
        return Err(Error::Precondition(format!("jerkiness needs >= 4 actions, got {}", actions.len())));
    }
    if !(dt > 0.0) {
        return Err(Error::Precondition("jerkiness needs dt > 0".into()));
    }
    let coords: Vec<usize> = spec.factor_ranges().filter(|(f, _)| f.is_euclidean()).flat_map(|(_, r)| r).collect();
    let n = actions.len() - 3;
    let mut sum = 0.0;
    for i in 0..n {
        for &k in &coords {
            let p = |j: usize| actions[i + j].0[k];
            let d3 = p(3) - 3.0 * p(2) + 3.0 * p(1) - p(0);
            sum += d3 * d3;
        }
    }
    Ok(sum / n as f64 / dt.powi(6))
}

/// CSV rows `rollout_id,ode_step,t,coords...` for one trajectory.
pub fn trajectory_rows(rollout_id: usize, traj: &Trajectory<Point>) -> String {
    let mut s = String::new();
    for (k, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        s.push_str(&format!("{rollout_id},{k},{t}"));
        for c in &x.0 {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests;
