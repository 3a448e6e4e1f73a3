//! End-to-end acceptance runs. Prints one line per criterion and exits
//! non-zero if any of them fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rfmp::distributions::{rng_from_seed, Prior, PriorFactor};
use rfmp::flows::FlowParams;
use rfmp::inference::{generate, IntegratorConfig, PolicyConfig};
use rfmp::manifolds::spd::min_eigenvalue;
use rfmp::nnet::{FlowMode, ModelConfig, VectorFieldModel};
use rfmp::properties::{
    exp_log_roundtrip_error, flow_consistency_error, gradient_check_error, lyapunov_violations, single_step_error,
    small_model_config, GEOMETRY_SPECS,
};
use rfmp::tasks::{gen_reach_dataset, gen_spd_dataset, gen_strokes, points_dataset, reach_rollout, ReachConfig, ReachEnv, StrokeShape};
use rfmp::training::{train, Dataset, TrainConfig};
use rfmp::{ManifoldSpec, Point};
use serde_json::Value;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn spec(s: &str) -> ManifoldSpec {
    s.parse().expect("valid manifold")
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn geometry() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, s) in GEOMETRY_SPECS.iter().enumerate() {
        let e = exp_log_roundtrip_error(&spec(s), 1000, 100 + i as u64, None).unwrap_or(f64::INFINITY);
        worst = worst.max(e);
        parts.push(format!("{s} {e:.1e}"));
    }
    let t = start.elapsed();
    outcome(worst <= 1e-8 && t < Duration::from_secs(10), format!("worst {worst:.2e} <= 1e-8 in {} < 10s ({})", secs(t), parts.join(", ")))
}

fn flow_consistency() -> Outcome {
    let mut worst: f64 = 0.0;
    for (i, s) in GEOMETRY_SPECS.iter().enumerate() {
        worst = worst.max(flow_consistency_error(&spec(s), 100, 200 + i as u64).unwrap_or(f64::INFINITY));
    }
    outcome(worst <= 1e-5, format!("worst finite-difference gap {worst:.2e} <= 1e-5"))
}

fn lasalle() -> Outcome {
    match lyapunov_violations(200, 100, 5.0, 1e-12, 300) {
        Ok((v, worst)) => outcome(v == 0, format!("{v} violations over 200 instances, largest increase {worst:.2e}")),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn single_step() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (s, tol) in [("R2", 1e-12), ("S2", 1e-10), ("SPD2", 1e-10)] {
        let e = single_step_error(&spec(s), 200, 400, None).unwrap_or(f64::INFINITY);
        ok &= e <= tol;
        parts.push(format!("{s} {e:.1e} <= {tol:.0e}"));
    }
    outcome(ok, parts.join(", "))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for s in ["R2", "S2", "SPD2"] {
        for (mode, separate, gate) in
            [(FlowMode::Rfmp, false, false), (FlowMode::Srfmp, false, false), (FlowMode::Srfmp, true, false), (FlowMode::Srfmp, false, true)]
        {
            let e = gradient_check_error(&spec(s), mode, &small_model_config(separate, gate), 500 + runs).unwrap_or(f64::INFINITY);
            worst = worst.max(e);
            runs += 1;
        }
    }
    let t = start.elapsed();
    outcome(worst <= 1e-4 && t < Duration::from_secs(30), format!("worst relative error {worst:.2e} <= 1e-4 over {runs} models in {} < 30s", secs(t)))
}

fn net(hidden: usize, gate: bool) -> ModelConfig {
    ModelConfig { hidden: vec![hidden; 3], embedding_dim: 32, tau_gate: gate, ..ModelConfig::default() }
}

fn train_config(mode: FlowMode, epochs: usize, model: ModelConfig) -> TrainConfig {
    TrainConfig { learning_rate: 1e-3, ema_decay: 0.99, batch_size: 256, epochs, seed: 0, mode, model, ..TrainConfig::default() }
}

const UNCONDITIONAL: PolicyConfig = PolicyConfig { t_p: 1, t_a: 1, t_o: 2, unconditional: true };

fn samples(model: &VectorFieldModel, prior: &Prior, t_end: f64, n: usize) -> Vec<Point> {
    let integ = IntegratorConfig::uniform((t_end / 0.1).round() as usize, t_end);
    let mut rng = rng_from_seed(77);
    (0..n).map(|_| generate(model, &[], prior, &integ, &mut rng).expect("integration").last().clone()).collect()
}

fn mean_nearest(spec: &ManifoldSpec, xs: &[Point], ds: &Dataset) -> f64 {
    let data: Vec<&Point> = ds.demos.iter().flat_map(|d| &d.actions).collect();
    let total: f64 =
        xs.iter().map(|x| data.iter().map(|a| spec.distance(x, a).expect("distance")).fold(f64::INFINITY, f64::min)).sum();
    total / xs.len() as f64
}

fn mean_displacement(spec: &ManifoldSpec, a: &[Point], b: &[Point]) -> f64 {
    a.iter().zip(b).map(|(x, y)| spec.distance(x, y).expect("distance")).sum::<f64>() / a.len() as f64
}

/// Criteria 6 and 7 share their two models.
fn sphere_strokes() -> (Outcome, Outcome) {
    let s2 = ManifoldSpec::sphere(2);
    let ds = gen_strokes(StrokeShape::L, 50, 0.05, 1).expect("strokes").to_dataset(true);
    let prior = Prior::new(s2.clone(), vec![PriorFactor::WrappedGaussian { mean: vec![0.0, 0.0, 1.0], scale: 0.5 }]).expect("prior");
    let mut ok6 = true;
    let mut parts6 = Vec::new();
    let mut disp = Vec::new();
    for (mode, flow, gate) in [
        (FlowMode::Rfmp, FlowParams::default(), false),
        (FlowMode::Srfmp, FlowParams { lambda_x: 4.0, lambda_tau: 4.0, ..FlowParams::default() }, true),
    ] {
        let start = Instant::now();
        let out = match train(&ds, &train_config(mode, 300, net(128, gate)), &UNCONDITIONAL, &flow, &prior) {
            Ok(o) => o,
            Err(e) => return (outcome(false, format!("{mode}: {e}")), outcome(false, "no model".into())),
        };
        let t = start.elapsed();
        let at1 = samples(&out.ema, &prior, 1.0, 256);
        let at2 = samples(&out.ema, &prior, 2.0, 256);
        let near = mean_nearest(&s2, &at1, &ds);
        let norm_err = at1.iter().map(|x| (x.0.iter().map(|c| c * c).sum::<f64>().sqrt() - 1.0).abs()).fold(0.0, f64::max);
        ok6 &= near <= 0.1 && norm_err <= 1e-9 && t < Duration::from_secs(600);
        parts6.push(format!("{mode}: nearest {near:.4} <= 0.1, norm err {norm_err:.1e}, train {}", secs(t)));
        disp.push(mean_displacement(&s2, &at1, &at2));
    }
    let (rfmp, srfmp) = (disp[0], disp[1]);
    let c7 = outcome(
        srfmp <= 0.05 && rfmp > srfmp,
        format!("T=1 to T=2 displacement: srfmp {srfmp:.4} <= 0.05, rfmp {rfmp:.4} (expected larger)"),
    );
    (outcome(ok6, parts6.join("; ")), c7)
}

fn reach_nfe() -> Outcome {
    let start = Instant::now();
    let rc = ReachConfig::default();
    let spec = rc.spec();
    let ds = gen_reach_dataset(&rc, 200, 16, 1000).expect("reach data");
    let policy = PolicyConfig { t_p: 8, t_a: 4, t_o: 2, unconditional: false };
    let prior = Prior::default_for(&spec);
    let flow = FlowParams::default();
    let evaluate = |model: &VectorFieldModel, integ: &IntegratorConfig| -> (f64, f64) {
        let (mut succ, mut score) = (0usize, 0.0);
        for trial in 0..50u64 {
            let mut env = ReachEnv::new(rc.clone(), 900_000 + trial).expect("env");
            let mut rng = rng_from_seed(trial);
            let o = reach_rollout(model, &mut env, &policy, integ, &prior, &mut rng).expect("rollout");
            succ += o.success as usize;
            score += o.score;
        }
        (succ as f64 / 50.0, score / 50.0)
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for mode in [FlowMode::Rfmp, FlowMode::Srfmp] {
        let out = match train(&ds, &train_config(mode, 300, net(128, false)), &policy, &flow, &prior) {
            Ok(o) => o,
            Err(e) => return outcome(false, format!("{mode}: {e}")),
        };
        let integ = |nfe| match mode {
            FlowMode::Rfmp => IntegratorConfig::uniform(nfe, 1.0),
            FlowMode::Srfmp => IntegratorConfig { nfe, ..IntegratorConfig::default() },
        };
        let (succ2, score2) = evaluate(&out.ema, &integ(2));
        ok &= succ2 >= 0.9;
        parts.push(format!("{mode} nfe2 success {succ2:.2} >= 0.9 (score {score2:.3})"));
        if mode == FlowMode::Srfmp {
            let (_, s1) = evaluate(&out.ema, &integ(1));
            let (_, s10) = evaluate(&out.ema, &integ(10));
            ok &= (s1 - s10).abs() <= 0.1;
            parts.push(format!("srfmp score nfe1 {s1:.3} vs nfe10 {s10:.3}"));
        }
    }
    let t = start.elapsed();
    ok &= t < Duration::from_secs(300);
    parts.push(format!("total {} < 300s", secs(t)));
    outcome(ok, parts.join(", "))
}

fn spd() -> Outcome {
    let spd2 = ManifoldSpec::spd(2);
    let ds = points_dataset(spd2.clone(), gen_spd_dataset(100, 3).expect("spd data")).expect("dataset");
    let prior = Prior::default_for(&spd2);
    let out = match train(&ds, &train_config(FlowMode::Rfmp, 2000, net(128, false)), &UNCONDITIONAL, &FlowParams::default(), &prior) {
        Ok(o) => o,
        Err(e) => return outcome(false, e.to_string()),
    };
    let xs = samples(&out.ema, &prior, 1.0, 256);
    let min_eig = xs.iter().map(|x| min_eigenvalue(2, &x.0)).fold(f64::INFINITY, f64::min);
    let near = mean_nearest(&spd2, &xs, &ds);
    outcome(min_eig > 0.0 && near <= 0.15, format!("min eigenvalue {min_eig:.3e} > 0, mean nearest {near:.4} <= 0.15"))
}

fn rfmp(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_rfmp"))
        .current_dir(dir)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

const RUN: &str = r#"{
  "seed": 11,
  "task": {"kind": "reach", "n_demos": 20, "pad": 4},
  "policy": {"t_p": 4, "t_a": 2, "t_o": 2},
  "mode": "srfmp",
  "train": {"epochs": 3, "model": {"hidden": [32, 32], "embedding_dim": 8}},
  "paths": {"dataset": "data.csv", "checkpoint": "model.bin", "output_dir": "out"},
  "rollout": {"n_trials": 5},
  "properties": {"cases": 10}
}"#;

const SAMPLE: &str = r#"{
  "seed": 12,
  "task": {"kind": "strokes", "shape": "s", "n_demos": 10, "noise": 0.05, "sphere": true},
  "policy": {"t_p": 1, "t_a": 1, "unconditional": true},
  "train": {"epochs": 3, "model": {"hidden": [32, 32], "embedding_dim": 8}},
  "paths": {"dataset": "data.csv", "checkpoint": "model.bin", "output_dir": "out"},
  "sample": {"n_samples": 32, "trajectories": true}
}"#;

/// Every artifact of a full command sequence, with wall-clock fields removed.
fn artifacts(config: &str, commands: &[&str]) -> Option<Vec<(String, Vec<u8>)>> {
    let dir = tempfile::tempdir().ok()?;
    fs::write(dir.path().join("run.json"), config).ok()?;
    for c in commands {
        if !rfmp(dir.path(), &[c, "--config", "run.json"]) {
            return None;
        }
    }
    let mut files = Vec::new();
    let mut stack = vec![dir.path().to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).ok()? {
            let p = entry.ok()?.path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let mut bytes = fs::read(&p).ok()?;
            if p.extension().is_some_and(|e| e == "json") {
                let mut v: Value = serde_json::from_slice(&bytes).ok()?;
                if let Some(o) = v.as_object_mut() {
                    o.remove("wall_time_ms");
                }
                bytes = serde_json::to_vec(&v).ok()?;
            }
            files.push((p.strip_prefix(dir.path()).ok()?.display().to_string(), bytes));
        }
    }
    files.sort();
    Some(files)
}

fn determinism() -> Outcome {
    let mut ok = true;
    let mut count = 0;
    for (config, commands) in [
        (RUN, &["gen-data", "train", "rollout", "eval-properties"][..]),
        (SAMPLE, &["gen-data", "train", "sample"][..]),
    ] {
        let a = artifacts(config, commands);
        let b = artifacts(config, commands);
        match (a, b) {
            (Some(a), Some(b)) => {
                count += a.len();
                ok &= a == b;
            }
            _ => ok = false,
        }
    }
    outcome(ok, format!("{count} artifacts from gen-data, train, rollout, sample and eval-properties identical across reruns"))
}

fn report(n: usize, name: &str, o: &Outcome) -> bool {
    println!("criterion {n:>2} {:<5} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    o.passed
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters must not launch the full runs.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return ExitCode::SUCCESS;
        }
    }

    let mut all = true;
    all &= report(1, "geometry roundtrip", &geometry());
    all &= report(2, "flow consistency", &flow_consistency());
    all &= report(3, "lyapunov monotonicity", &lasalle());
    all &= report(4, "single-step convergence", &single_step());
    all &= report(5, "gradient check", &gradient_check());
    let (c6, c7) = sphere_strokes();
    all &= report(6, "sphere strokes generation", &c6);
    all &= report(7, "stability beyond t=1", &c7);
    all &= report(8, "reach nfe robustness", &reach_nfe());
    all &= report(9, "spd generation", &spd());
    all &= report(10, "cli determinism", &determinism());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
