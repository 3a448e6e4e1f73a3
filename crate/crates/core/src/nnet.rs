//! Conditioned MLP vector-field regressor.
//!
//! The network input is the concatenation `[chunk coords, embed(t or tau), obs]`
//! and the output is the raw ambient field for the chunk, plus one scalar
//! `v_tau` in stable mode. Activations are stored column-wise (features x
//! batch) so a whole batch runs through one matrix product per layer.
//! Gradients are computed by hand-written reverse mode.
//!
//! Checkpoints are little-endian binary files starting with `RFMPCKPT`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::distributions::Rng;
use crate::error::{Error, Result};
use crate::flows::FlowParams;
use crate::manifolds::{ManifoldSpec, Point, Tangent};

/// Training/inference flow variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FlowMode {
    #[default]
    Rfmp,
    Srfmp,
}

impl FlowMode {
    fn to_byte(self) -> u8 {
        match self {
            FlowMode::Rfmp => 0,
            FlowMode::Srfmp => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(FlowMode::Rfmp),
            1 => Ok(FlowMode::Srfmp),
            _ => Err(Error::Format(format!("unknown flow mode byte {b}"))),
        }
    }
}

impl std::fmt::Display for FlowMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FlowMode::Rfmp => "rfmp",
            FlowMode::Srfmp => "srfmp",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `z * sigmoid(z)`
    #[default]
    Silu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            Activation::Silu => 0,
            Activation::Identity => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Activation::Silu),
            1 => Ok(Activation::Identity),
            _ => Err(Error::Format(format!("unknown activation byte {b}"))),
        }
    }
}

/// Sinusoidal embedding with interleaved `[sin(t w_k), cos(t w_k)]` pairs and
/// `w_k = 10000^(-2k/dim)`.
pub fn embed_time(t: f64, dim: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    embed_time_into(t, dim, &mut out)?;
    Ok(out)
}

fn embed_time_into(t: f64, dim: usize, out: &mut [f64]) -> Result<()> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!("embedding_dim must be even and >= 2, got {dim}")));
    }
    for k in 0..dim / 2 {
        let w = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        let (s, c) = (t * w).sin_cos();
        out[2 * k] = s;
        out[2 * k + 1] = c;
    }
    Ok(())
}

/// One affine layer `z = W a + b`; `W` is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Stored pre-activations and activations of one batched forward pass.
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l + 1]` is the output of layer `l`.
    activations: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().expect("cache holds the input")
    }
}

/// Fully connected network; the activation is applied after every layer but
/// the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl Mlp {
    /// Uniform `+-1/sqrt(fan_in)` initialisation; the last layer is zeroed
    /// when `zero_final` is set.
    pub fn new(sizes: &[usize], activation: Activation, zero_final: bool, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
                if zero_final && l + 1 == n {
                    return Layer { weight: DMatrix::zeros(fan_out, fan_in), bias: DVector::zeros(fan_out) };
                }
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = || rng.random_range(-bound..bound);
                // Row-major draw order keeps initialisation independent of storage order.
                let mut weight = DMatrix::zeros(fan_out, fan_in);
                for r in 0..fan_out {
                    for c in 0..fan_in {
                        weight[(r, c)] = draw();
                    }
                }
                let bias = DVector::from_iterator(fan_out, (0..fan_out).map(|_| draw()));
                Layer { weight, bias }
            })
            .collect();
        Ok(Mlp { layers, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(Layer::out_dim).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn forward(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = input.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &a;
            add_bias(&mut z, &layer.bias);
            if l != last {
                z.apply(|v| *v = self.activation.apply(*v));
            }
            a = z;
        }
        a
    }

    pub fn forward_cached(&self, input: DMatrix<f64>) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut activations = vec![input];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * activations.last().expect("non-empty");
            add_bias(&mut z, &layer.bias);
            let a = if l != last { z.map(|v| self.activation.apply(v)) } else { z.clone() };
            pre.push(z);
            activations.push(a);
        }
        ForwardCache { activations, pre }
    }

    /// Accumulates `d loss / d params` into `grad` (flat, in [`Mlp::params`]
    /// order) given `d loss / d output`, and returns `d loss / d input`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: DMatrix<f64>, grad: &mut [f64]) -> DMatrix<f64> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.num_params();
        }
        let mut g = grad_out;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_prev = &cache.activations[l];
            let dw = &g * a_prev.transpose();
            let (rows, cols) = (layer.out_dim(), layer.in_dim());
            let base = offsets[l];
            for r in 0..rows {
                for c in 0..cols {
                    grad[base + r * cols + c] += dw[(r, c)];
                }
                grad[base + rows * cols + r] += g.row(r).sum();
            }
            let mut g_prev = layer.weight.transpose() * &g;
            if l > 0 {
                let z = &cache.pre[l - 1];
                g_prev.zip_apply(z, |gv, zv| *gv *= self.activation.derivative(zv));
            }
            g = g_prev;
        }
        g
    }

    /// Flat parameters: per layer, the weight matrix row-major then the bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            for r in 0..layer.out_dim() {
                out.extend(layer.weight.row(r).iter());
            }
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Config(format!("expected {} parameters, got {}", self.num_params(), p.len())));
        }
        let mut k = 0;
        for layer in &mut self.layers {
            let (rows, cols) = (layer.out_dim(), layer.in_dim());
            for r in 0..rows {
                for c in 0..cols {
                    layer.weight[(r, c)] = p[k];
                    k += 1;
                }
            }
            for r in 0..rows {
                layer.bias[r] = p[k];
                k += 1;
            }
        }
        Ok(())
    }
}

fn add_bias(z: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in z.column_iter_mut() {
        col += b;
    }
}

fn default_hidden() -> Vec<usize> {
    vec![256, 256, 256]
}

fn default_embedding_dim() -> usize {
    32
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Learn `v_tau` with its own MLP instead of an extra output of the trunk.
    #[serde(default)]
    pub separate_tau_head: bool,
    /// Hidden widths of the separate tau MLP.
    #[serde(default)]
    pub tau_hidden: Vec<usize>,
    /// Stable mode: scale the outputs by powers of `(tau1 - tau) / (tau1 - tau0)`
    /// so the learned field vanishes at `tau1`.
    #[serde(default)]
    pub tau_gate: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: default_hidden(),
            embedding_dim: default_embedding_dim(),
            activation: Activation::Silu,
            separate_tau_head: false,
            tau_hidden: vec![64],
            tau_gate: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 || !self.embedding_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("model.embedding_dim must be even and >= 2, got {}", self.embedding_dim)));
        }
        if self.hidden.iter().chain(&self.tau_hidden).any(|&w| w == 0) {
            return Err(Error::Config("model hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Input layout of the regressor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputLayout {
    /// Ambient dimension of a whole action chunk.
    pub chunk_dim: usize,
    pub obs_dim: usize,
    pub embedding_dim: usize,
    /// Prediction horizon `T_p` (actions per chunk).
    pub horizon: usize,
}

impl InputLayout {
    pub fn input_dim(&self) -> usize {
        self.chunk_dim + self.embedding_dim + self.obs_dim
    }
}

/// Per-coordinate affine standardisation of Euclidean coordinates. Entries
/// belonging to manifold factors stay at mean 0, std 1.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Standardizer {
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(action_dim: usize, obs_dim: usize) -> Self {
        Standardizer {
            action_mean: vec![0.0; action_dim],
            action_std: vec![1.0; action_dim],
            obs_mean: vec![0.0; obs_dim],
            obs_std: vec![1.0; obs_dim],
        }
    }

    fn apply(v: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
        let n = mean.len();
        v.iter().enumerate().map(|(i, x)| (x - mean[i % n]) / std[i % n]).collect()
    }

    fn invert(v: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
        let n = mean.len();
        v.iter().enumerate().map(|(i, x)| x * std[i % n] + mean[i % n]).collect()
    }

    /// Normalises one action or a stacked chunk of actions.
    pub fn normalize_action(&self, a: &[f64]) -> Vec<f64> {
        if self.action_mean.is_empty() {
            return a.to_vec();
        }
        Self::apply(a, &self.action_mean, &self.action_std)
    }

    pub fn denormalize_action(&self, a: &[f64]) -> Vec<f64> {
        if self.action_mean.is_empty() {
            return a.to_vec();
        }
        Self::invert(a, &self.action_mean, &self.action_std)
    }

    /// Normalises one observation or a stack of them.
    pub fn normalize_obs(&self, o: &[f64]) -> Vec<f64> {
        if self.obs_mean.is_empty() {
            return o.to_vec();
        }
        Self::apply(o, &self.obs_mean, &self.obs_std)
    }
}

/// A batch of regression examples for the loss.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    /// Points `x_t` on the chunk manifold.
    pub points: Vec<Vec<f64>>,
    /// Network time input (`t` or `tau`).
    pub times: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    /// Target tangents at `x_t`.
    pub targets: Vec<Vec<f64>>,
    /// Targets for `v_tau` (stable mode only).
    pub tau_targets: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: Vec<f64>, time: f64, obs: Vec<f64>, target: Vec<f64>, tau_target: Option<f64>) {
        self.points.push(point);
        self.times.push(time);
        self.obs.push(obs);
        self.targets.push(target);
        if let Some(t) = tau_target {
            self.tau_targets.push(t);
        }
    }
}

/// The learned field `v(x_t, t | o)` (or `v(xi | o)` in stable mode).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFieldModel {
    action_spec: ManifoldSpec,
    chunk_spec: ManifoldSpec,
    layout: InputLayout,
    mode: FlowMode,
    flow: FlowParams,
    standardizer: Standardizer,
    trunk: Mlp,
    tau_net: Option<Mlp>,
    tau_gate: bool,
}

impl VectorFieldModel {
    pub fn new(
        action_spec: &ManifoldSpec,
        horizon: usize,
        obs_dim: usize,
        mode: FlowMode,
        flow: FlowParams,
        config: &ModelConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        if horizon == 0 {
            return Err(Error::Config("prediction horizon must be >= 1".into()));
        }
        let chunk_spec = action_spec.power(horizon);
        let layout = InputLayout {
            chunk_dim: chunk_spec.ambient_dim(),
            obs_dim,
            embedding_dim: config.embedding_dim,
            horizon,
        };
        let extra = usize::from(mode == FlowMode::Srfmp && !config.separate_tau_head);
        let mut sizes = vec![layout.input_dim()];
        sizes.extend(&config.hidden);
        sizes.push(layout.chunk_dim + extra);
        let trunk = Mlp::new(&sizes, config.activation, true, rng)?;
        let tau_net = if mode == FlowMode::Srfmp && config.separate_tau_head {
            let mut sizes = vec![layout.input_dim()];
            sizes.extend(&config.tau_hidden);
            sizes.push(1);
            Some(Mlp::new(&sizes, config.activation, true, rng)?)
        } else {
            None
        };
        Ok(VectorFieldModel {
            action_spec: action_spec.clone(),
            chunk_spec,
            layout,
            mode,
            flow,
            standardizer: Standardizer::identity(action_spec.ambient_dim(), obs_dim),
            trunk,
            tau_net,
            tau_gate: config.tau_gate && mode == FlowMode::Srfmp,
        })
    }

    /// Builds a model from explicit networks (used by tests and checkpoints).
    pub fn from_parts(
        action_spec: &ManifoldSpec,
        layout: InputLayout,
        mode: FlowMode,
        flow: FlowParams,
        standardizer: Standardizer,
        trunk: Mlp,
        tau_net: Option<Mlp>,
    ) -> Result<Self> {
        let chunk_spec = action_spec.power(layout.horizon);
        if chunk_spec.ambient_dim() != layout.chunk_dim {
            return Err(Error::Config("layout chunk_dim does not match the manifold".into()));
        }
        let out = layout.chunk_dim + usize::from(mode == FlowMode::Srfmp && tau_net.is_none());
        if trunk.in_dim() != layout.input_dim() || trunk.out_dim() != out {
            return Err(Error::Config(format!(
                "network shape {}->{} does not match layout {}->{}",
                trunk.in_dim(),
                trunk.out_dim(),
                layout.input_dim(),
                out
            )));
        }
        if let Some(net) = &tau_net {
            if mode != FlowMode::Srfmp || net.in_dim() != layout.input_dim() || net.out_dim() != 1 {
                return Err(Error::Config("tau network does not match layout".into()));
            }
        }
        for net in std::iter::once(&trunk).chain(tau_net.as_ref()) {
            if net.layers.windows(2).any(|w| w[0].out_dim() != w[1].in_dim()) {
                return Err(Error::Config("layer shapes do not chain".into()));
            }
        }
        Ok(VectorFieldModel {
            action_spec: action_spec.clone(),
            chunk_spec,
            layout,
            mode,
            flow,
            standardizer,
            trunk,
            tau_net,
            tau_gate: false,
        })
    }

    /// Turns the tau gate on or off (stable mode only).
    pub fn with_tau_gate(mut self, on: bool) -> Result<Self> {
        if on && self.mode != FlowMode::Srfmp {
            return Err(Error::Config("the tau gate needs srfmp mode".into()));
        }
        self.tau_gate = on;
        Ok(self)
    }

    pub fn tau_gate(&self) -> bool {
        self.tau_gate
    }

    /// Output multipliers `(spatial, tau)` at temperature `time`. With the
    /// gate on these are `r^(lambda_x / lambda_tau)` and `r` for
    /// `r = max(0, (tau1 - tau) / (tau1 - tau0))`, the factors by which the
    /// exact conditional fields shrink along the path.
    pub fn output_gains(&self, time: f64) -> (f64, f64) {
        if !self.tau_gate {
            return (1.0, 1.0);
        }
        let f = &self.flow;
        let r = ((f.tau1 - time) / (f.tau1 - f.tau0)).max(0.0);
        (r.powf(f.lambda_x / f.lambda_tau), r)
    }

    pub fn action_spec(&self) -> &ManifoldSpec {
        &self.action_spec
    }

    pub fn chunk_spec(&self) -> &ManifoldSpec {
        &self.chunk_spec
    }

    pub fn layout(&self) -> InputLayout {
        self.layout
    }

    pub fn mode(&self) -> FlowMode {
        self.mode
    }

    pub fn flow_params(&self) -> &FlowParams {
        &self.flow
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn set_standardizer(&mut self, s: Standardizer) {
        self.standardizer = s;
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn tau_net(&self) -> Option<&Mlp> {
        self.tau_net.as_ref()
    }

    pub fn num_params(&self) -> usize {
        self.trunk.num_params() + self.tau_net.as_ref().map_or(0, Mlp::num_params)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.trunk.params();
        if let Some(net) = &self.tau_net {
            p.extend(net.params());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Config(format!("expected {} parameters, got {}", self.num_params(), p.len())));
        }
        let n = self.trunk.num_params();
        self.trunk.set_params(&p[..n])?;
        if let Some(net) = &mut self.tau_net {
            net.set_params(&p[n..])?;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64], obs: &[f64]) -> Result<()> {
        if x.len() != self.layout.chunk_dim || obs.len() != self.layout.obs_dim {
            return Err(Error::Config(format!(
                "input shape ({}, {}) does not match layout ({}, {})",
                x.len(),
                obs.len(),
                self.layout.chunk_dim,
                self.layout.obs_dim
            )));
        }
        Ok(())
    }

    fn input_matrix(&self, points: &[Vec<f64>], times: &[f64], obs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let l = self.layout;
        let mut m = DMatrix::zeros(l.input_dim(), points.len());
        let mut emb = vec![0.0; l.embedding_dim];
        for (j, ((x, &t), o)) in points.iter().zip(times).zip(obs).enumerate() {
            self.check_input(x, o)?;
            embed_time_into(t, l.embedding_dim, &mut emb)?;
            let mut col = m.column_mut(j);
            for (i, v) in x.iter().chain(&emb).chain(o).enumerate() {
                col[i] = *v;
            }
        }
        Ok(m)
    }

    /// Raw network output for one input: `chunk_dim` spatial entries, then
    /// `v_tau` in stable mode.
    pub fn forward(&self, x: &[f64], time: f64, obs: &[f64]) -> Result<Vec<f64>> {
        let out = self.forward_batch(&[x.to_vec()], &[time], &[obs.to_vec()])?;
        Ok(out.column(0).iter().copied().collect())
    }

    pub fn forward_batch(&self, points: &[Vec<f64>], times: &[f64], obs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let input = self.input_matrix(points, times, obs)?;
        let mut out = self.trunk.forward(&input);
        let c = self.layout.chunk_dim;
        if let Some(net) = &self.tau_net {
            out = out.insert_row(c, 0.0);
            out.row_mut(c).copy_from(&net.forward(&input).row(0));
        }
        if self.tau_gate {
            for (j, &t) in times.iter().enumerate() {
                let (gx, gt) = self.output_gains(t);
                out.column_mut(j).rows_mut(0, c).scale_mut(gx);
                out[(c, j)] *= gt;
            }
        }
        Ok(out)
    }

    /// The spatial field projected onto `T_x M` and the raw `v_tau` output
    /// (zero in rfmp mode).
    pub fn field(&self, x: &Point, time: f64, obs: &[f64]) -> Result<(Tangent, f64)> {
        let raw = self.forward(&x.0, time, obs)?;
        let c = self.layout.chunk_dim;
        let spatial = self.chunk_spec.project_tangent_unchecked(&x.0, &raw[..c]);
        let tau = if self.mode == FlowMode::Srfmp { raw[c] } else { 0.0 };
        Ok((Tangent::new(x.clone(), spatial), tau))
    }

    /// Mean over the batch of `||P_x(v) - u||_g^2`, plus `(v_tau - u_tau)^2`
    /// in stable mode.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        Ok(self.loss_impl(batch, false)?.0)
    }

    /// Loss and its gradient with respect to [`VectorFieldModel::params`].
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let (loss, grad) = self.loss_impl(batch, true)?;
        Ok((loss, grad.expect("requested")))
    }

    fn loss_impl(&self, batch: &Batch, with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Precondition("empty batch".into()));
        }
        let stable = self.mode == FlowMode::Srfmp;
        if batch.times.len() != n || batch.obs.len() != n || batch.targets.len() != n {
            return Err(Error::Config("batch fields have different lengths".into()));
        }
        if stable && batch.tau_targets.len() != n {
            return Err(Error::Config("stable-mode batch needs one tau target per example".into()));
        }
        let c = self.layout.chunk_dim;
        let input = self.input_matrix(&batch.points, &batch.times, &batch.obs)?;
        let trunk_cache = self.trunk.forward_cached(input.clone());
        let tau_cache = self.tau_net.as_ref().map(|net| net.forward_cached(input));
        let out = trunk_cache.output();
        let scale = 1.0 / n as f64;

        let mut loss = 0.0;
        let mut g_trunk = DMatrix::zeros(out.nrows(), n);
        let mut g_tau = DMatrix::zeros(1, n);
        for j in 0..n {
            let x = &batch.points[j];
            let (gain_x, gain_t) = self.output_gains(batch.times[j]);
            let raw: Vec<f64> = out.column(j).rows(0, c).iter().map(|v| gain_x * v).collect();
            let v = self.chunk_spec.project_tangent_unchecked(x, &raw);
            let r: Vec<f64> = v.iter().zip(&batch.targets[j]).map(|(a, b)| a - b).collect();
            loss += self.chunk_spec.inner_unchecked(x, &r, &r);
            if with_grad {
                let g = self.chunk_spec.norm_sq_grad(x, &r);
                let g = self.chunk_spec.project_tangent_unchecked(x, &g);
                for (i, gi) in g.iter().enumerate() {
                    g_trunk[(i, j)] = gain_x * gi * scale;
                }
            }
            if stable {
                let v_tau = gain_t
                    * match &tau_cache {
                        Some(tc) => tc.output()[(0, j)],
                        None => out[(c, j)],
                    };
                let rt = v_tau - batch.tau_targets[j];
                loss += rt * rt;
                let gt = 2.0 * gain_t * rt * scale;
                match &tau_cache {
                    Some(_) => g_tau[(0, j)] = gt,
                    None => g_trunk[(c, j)] = gt,
                }
            }
        }
        loss *= scale;
        if !with_grad {
            return Ok((loss, None));
        }
        let mut grad = vec![0.0; self.num_params()];
        let nt = self.trunk.num_params();
        self.trunk.backward(&trunk_cache, g_trunk, &mut grad[..nt]);
        if let (Some(net), Some(tc)) = (&self.tau_net, &tau_cache) {
            net.backward(tc, g_tau, &mut grad[nt..]);
        }
        Ok((loss, Some(grad)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(CKPT_MAGIC);
        put_u32(&mut w, CKPT_VERSION);
        let spec = self.action_spec.to_string();
        put_u32(&mut w, spec.len() as u32);
        w.extend_from_slice(spec.as_bytes());
        for v in [self.layout.chunk_dim, self.layout.obs_dim, self.layout.embedding_dim, self.layout.horizon] {
            put_u32(&mut w, v as u32);
        }
        w.push(self.mode.to_byte());
        for v in [self.flow.sigma, self.flow.lambda_x, self.flow.lambda_tau, self.flow.tau0, self.flow.tau1] {
            put_f64(&mut w, v);
        }
        let s = &self.standardizer;
        for v in [&s.action_mean, &s.action_std, &s.obs_mean, &s.obs_std] {
            put_f64s(&mut w, v);
        }
        w.push(self.trunk.activation.to_byte());
        w.push(u8::from(self.tau_gate));
        let nets: Vec<&Mlp> = std::iter::once(&self.trunk).chain(self.tau_net.as_ref()).collect();
        put_u32(&mut w, nets.len() as u32);
        for net in nets {
            put_u32(&mut w, net.layers.len() as u32);
            for layer in &net.layers {
                put_u32(&mut w, layer.out_dim() as u32);
                put_u32(&mut w, layer.in_dim() as u32);
                for r in 0..layer.out_dim() {
                    for c in 0..layer.in_dim() {
                        put_f64(&mut w, layer.weight[(r, c)]);
                    }
                }
                for v in layer.bias.iter() {
                    put_f64(&mut w, *v);
                }
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CKPT_MAGIC {
            return Err(Error::Format("missing RFMPCKPT magic".into()));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let spec_str = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Format("manifold string is not UTF-8".into()))?;
        let action_spec: ManifoldSpec = spec_str.parse()?;
        let layout = InputLayout {
            chunk_dim: r.u32()? as usize,
            obs_dim: r.u32()? as usize,
            embedding_dim: r.u32()? as usize,
            horizon: r.u32()? as usize,
        };
        let mode = FlowMode::from_byte(r.u8()?)?;
        let flow = FlowParams { sigma: r.f64()?, lambda_x: r.f64()?, lambda_tau: r.f64()?, tau0: r.f64()?, tau1: r.f64()? };
        let standardizer = Standardizer { action_mean: r.f64s()?, action_std: r.f64s()?, obs_mean: r.f64s()?, obs_std: r.f64s()? };
        let activation = Activation::from_byte(r.u8()?)?;
        let tau_gate = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad tau gate flag {b}"))),
        };
        let n_nets = r.u32()? as usize;
        if !(1..=2).contains(&n_nets) {
            return Err(Error::Format(format!("expected 1 or 2 networks, found {n_nets}")));
        }
        let mut nets = Vec::with_capacity(n_nets);
        for _ in 0..n_nets {
            let n_layers = r.u32()? as usize;
            if n_layers == 0 {
                return Err(Error::Format("network without layers".into()));
            }
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let rows = r.u32()? as usize;
                let cols = r.u32()? as usize;
                let mut weight = DMatrix::zeros(rows, cols);
                for i in 0..rows {
                    for j in 0..cols {
                        weight[(i, j)] = r.f64()?;
                    }
                }
                let bias = DVector::from_iterator(rows, (0..rows).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
                layers.push(Layer { weight, bias });
            }
            nets.push(Mlp { layers, activation });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint payload".into()));
        }
        let tau_net = if nets.len() == 2 { nets.pop() } else { None };
        let trunk = nets.pop().expect("one network");
        if trunk.params().into_iter().chain(tau_net.iter().flat_map(|n| n.params())).any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite weight".into()));
        }
        Self::from_parts(&action_spec, layout, mode, flow, standardizer, trunk, tau_net)
            .and_then(|m| m.with_tau_gate(tau_gate))
            .map_err(|e| Error::Format(e.to_string()))
    }
}

const CKPT_MAGIC: &[u8; 8] = b"RFMPCKPT";
const CKPT_VERSION: u32 = 1;

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(w: &mut Vec<u8>, v: f64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(w: &mut Vec<u8>, v: &[f64]) {
    put_u32(w, v.len() as u32);
    for x in v {
        put_f64(w, *x);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.f64()).collect()
    }
}
