//! The subcommands. Each one receives a validated config and touches the
//! filesystem only after every input has been read and checked.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rfmp::distributions::rng_from_seed;
use rfmp::inference::{generate, jerkiness, trajectory_rows};
use rfmp::nnet::{FlowMode, VectorFieldModel};
use rfmp::properties::run_properties;
use rfmp::tasks::{load_dataset, reach_rollout, save_dataset, ReachEnv, TaskConfig};
use rfmp::training::{history_csv, train, Dataset};
use rfmp::{ManifoldSpec, Point};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Validated;
use crate::error::{CliError, CliResult};

/// Policy seeds are decorrelated from the environment seeds they pair with.
const POLICY_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const SAMPLE_SEED_SALT: u64 = 0x5a3b_1e5e_ed00_0001;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serialises");
    s.push('\n');
    s
}

fn load_checked_dataset(path: &Path, spec: &ManifoldSpec) -> CliResult<Dataset> {
    if !path.exists() {
        return Err(CliError::field("paths.dataset", format!("{} does not exist", path.display())));
    }
    let (header, ds) = load_dataset(path)?;
    if &ds.spec != spec {
        return Err(CliError::field(
            "manifold",
            format!("dataset {} holds {} actions but the config expects {spec}", path.display(), header.spec),
        ));
    }
    Ok(ds)
}

fn load_checked_model(v: &Validated) -> CliResult<VectorFieldModel> {
    let path = v.config.paths.checkpoint.as_deref().expect("validated");
    if !path.exists() {
        return Err(CliError::field("paths.checkpoint", format!("{} does not exist", path.display())));
    }
    let model = VectorFieldModel::load(path)?;
    if model.action_spec() != &v.spec {
        return Err(CliError::field(
            "manifold",
            format!("checkpoint acts on {} but the config expects {}", model.action_spec(), v.spec),
        ));
    }
    if model.layout().horizon != v.config.policy.t_p {
        return Err(CliError::field(
            "policy.t_p",
            format!("{} differs from the checkpoint horizon {}", v.config.policy.t_p, model.layout().horizon),
        ));
    }
    model.flow_params().validate()?;
    v.config.integrator.validate(model.flow_params()).map_err(|e| CliError::field("integrator", e))?;
    Ok(model)
}

fn mode_name(m: FlowMode) -> &'static str {
    match m {
        FlowMode::Rfmp => "rfmp",
        FlowMode::Srfmp => "srfmp",
    }
}

fn coords_row(prefix: &str, p: &Point) -> String {
    let mut s = prefix.to_string();
    for c in &p.0 {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    s
}

fn coord_header(first: &str, dim: usize) -> String {
    let mut s = first.to_string();
    for k in 0..dim {
        let _ = write!(s, ",x{k}");
    }
    s.push('\n');
    s
}

fn output_dir(v: &Validated) -> PathBuf {
    v.config.paths.output_dir.clone().expect("validated")
}

/// Writes a freshly generated dataset to `paths.dataset`.
pub fn gen_data(v: &Validated) -> CliResult<()> {
    let path = v.config.paths.dataset.as_deref().expect("validated");
    let ds = v.config.task.generate(v.config.seed)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    save_dataset(path, &ds, v.config.task.name(), v.config.seed)?;
    eprintln!("wrote {} demonstrations to {}", ds.demos.len(), path.display());
    Ok(())
}

/// Trains on `paths.dataset` and writes the inference weights to
/// `paths.checkpoint` plus a `loss.csv`.
pub fn train_cmd(v: &Validated) -> CliResult<()> {
    let ds = load_checked_dataset(v.config.paths.dataset.as_deref().expect("validated"), &v.spec)?;
    let tc = v.train_config();
    let out = train(&ds, &tc, &v.config.policy, &v.config.flow, &v.prior)?;
    let ckpt = v.config.paths.checkpoint.as_deref().expect("validated");
    let loss_path = match &v.config.paths.output_dir {
        Some(d) => d.join("loss.csv"),
        None => ckpt.parent().unwrap_or(Path::new("")).join("loss.csv"),
    };
    write_file(ckpt, out.ema.to_bytes())?;
    write_file(&loss_path, history_csv(&out.history))?;
    if let Some(last) = out.history.last() {
        eprintln!("epoch {}: loss {:.6}, checkpoint {}", last.epoch, last.mean_loss, ckpt.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct TrialRecord {
    trial: usize,
    env_seed: u64,
    success: bool,
    score: f64,
    /// Absent when the episode is shorter than four steps.
    jerkiness: Option<f64>,
    steps: usize,
    policy_calls: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Closed-loop reach episodes with environment seeds `seed ..`.
pub fn rollout(v: &Validated) -> CliResult<()> {
    let model = load_checked_model(v)?;
    if model.layout().obs_dim == 0 {
        return Err(CliError::field("paths.checkpoint", "the checkpoint is unconditional; rollout needs an observation-conditioned policy"));
    }
    let TaskConfig::Reach { env: env_cfg, .. } = &v.config.task else { unreachable!("validated") };
    let dir = output_dir(v);
    let integ = &v.config.integrator;
    let nfe = integ.schedule(model.mode(), model.flow_params()).len();

    let start = Instant::now();
    let mut records = Vec::new();
    let mut csv = coord_header("trial,step", v.spec.ambient_dim());
    for trial in 0..v.config.rollout.n_trials {
        let env_seed = v.config.seed.wrapping_add(trial as u64);
        let mut env = ReachEnv::new(env_cfg.clone(), env_seed)?;
        let start_pos = env.agent.clone();
        let mut rng = rng_from_seed(env_seed ^ POLICY_SEED_SALT);
        let out = reach_rollout(&model, &mut env, &v.config.policy, integ, &v.prior, &mut rng)?;
        csv.push_str(&coords_row(&format!("{trial},0"), &start_pos));
        for (k, a) in out.actions.iter().enumerate() {
            csv.push_str(&coords_row(&format!("{trial},{}", k + 1), a));
        }
        records.push(TrialRecord {
            trial,
            env_seed,
            success: out.success,
            score: out.score,
            jerkiness: jerkiness(&v.spec, &out.actions, 1.0).ok(),
            steps: out.actions.len(),
            policy_calls: out.policy_calls,
        });
    }
    let wall = start.elapsed().as_secs_f64() * 1e3;

    let n = records.len() as f64;
    let summary = json!({
        "mode": mode_name(model.mode()),
        "n_trials": records.len(),
        "nfe": nfe,
        "t_end": integ.t_end,
        "success": records.iter().filter(|r| r.success).count() as f64 / n,
        "score": mean(records.iter().map(|r| r.score)),
        "jerkiness": mean(records.iter().filter_map(|r| r.jerkiness)),
        "wall_time_ms": wall,
        "trials": records,
    });
    write_file(&dir.join("rollout_trajectories.csv"), csv)?;
    write_file(&dir.join("rollout_summary.json"), pretty(&summary))?;
    println!("{}", pretty(&summary_headline(&summary)).trim_end());
    Ok(())
}

fn summary_headline(summary: &Value) -> Value {
    let mut s = summary.clone();
    if let Some(o) = s.as_object_mut() {
        o.remove("trials");
    }
    s
}

/// Unconditional samples integrated to `integrator.t_end`.
pub fn sample(v: &Validated) -> CliResult<()> {
    let model = load_checked_model(v)?;
    if model.layout().obs_dim != 0 {
        return Err(CliError::field("paths.checkpoint", "the checkpoint is observation-conditioned; sample needs an unconditional model"));
    }
    let reference = match &v.config.paths.dataset {
        Some(p) => Some(load_checked_dataset(p, &v.spec)?),
        None => None,
    };
    let dir = output_dir(v);
    let integ = &v.config.integrator;
    let nfe = integ.schedule(model.mode(), model.flow_params()).len();
    let chunk = model.chunk_spec().clone();

    let start = Instant::now();
    let mut rng = rng_from_seed(v.config.seed ^ SAMPLE_SEED_SALT);
    let mut samples = Vec::with_capacity(v.config.sample.n_samples);
    let mut traj_csv = coord_header("sample,ode_step,t", chunk.ambient_dim());
    for i in 0..v.config.sample.n_samples {
        let traj = generate(&model, &[], &v.prior, integ, &mut rng)?;
        if v.config.sample.trajectories {
            traj_csv.push_str(&trajectory_rows(i, &traj));
        }
        samples.push(traj.last().clone());
    }
    let wall = start.elapsed().as_secs_f64() * 1e3;

    let mut csv = coord_header("sample", chunk.ambient_dim());
    for (i, s) in samples.iter().enumerate() {
        csv.push_str(&coords_row(&i.to_string(), s));
    }
    let nearest = match &reference {
        Some(ds) => Some(mean_nearest_distance(&chunk, &samples, ds)?),
        None => None,
    };
    let summary = json!({
        "mode": mode_name(model.mode()),
        "n_samples": samples.len(),
        "nfe": nfe,
        "t_end": integ.t_end,
        "mean_nearest_distance": nearest,
        "wall_time_ms": wall,
    });
    write_file(&dir.join("samples.csv"), csv)?;
    if v.config.sample.trajectories {
        write_file(&dir.join("sample_trajectories.csv"), traj_csv)?;
    }
    write_file(&dir.join("sample_summary.json"), pretty(&summary))?;
    println!("{}", pretty(&summary).trim_end());
    Ok(())
}

/// Mean geodesic distance from each sample to its nearest dataset action
/// (single-action chunks only).
fn mean_nearest_distance(spec: &ManifoldSpec, samples: &[Point], ds: &Dataset) -> CliResult<f64> {
    if spec != &ds.spec {
        return Err(CliError::field("policy.t_p", "nearest-distance evaluation needs single-action chunks (t_p = 1)"));
    }
    let data: Vec<&Point> = ds.demos.iter().flat_map(|d| &d.actions).collect();
    let mut total = 0.0;
    for s in samples {
        let mut best = f64::INFINITY;
        for d in &data {
            best = best.min(spec.distance(s, d)?);
        }
        total += best;
    }
    Ok(total / samples.len() as f64)
}

/// Runs the invariant suite and fails with exit code 1 if anything breaks.
pub fn eval_properties(v: &Validated) -> CliResult<()> {
    let report = run_properties(&v.config.properties, v.config.seed)?;
    let text = pretty(&report);
    if let Some(dir) = &v.config.paths.output_dir {
        write_file(&dir.join("properties.json"), &text)?;
    }
    print!("{text}");
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::PropertyFailure(report.failures().map(|p| p.name.clone()).collect()))
    }
}

/// Prints the resolved config.
pub fn show_config(v: &Validated) -> CliResult<()> {
    print!("{}", pretty(&v.config));
    Ok(())
}
