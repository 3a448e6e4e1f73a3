//! Run configuration: one JSON document plus dotted `--key value` overrides.

use std::path::{Path, PathBuf};

use rfmp::distributions::{Prior, PriorFactor};
use rfmp::flows::FlowParams;
use rfmp::inference::{IntegratorConfig, PolicyConfig};
use rfmp::nnet::FlowMode;
use rfmp::properties::PropertyConfig;
use rfmp::tasks::TaskConfig;
use rfmp::training::TrainConfig;
use rfmp::ManifoldSpec;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Short flags and the dotted paths they stand for.
pub const ALIASES: [(&str, &str); 2] = [("t_end", "integrator.t_end"), ("nfe", "integrator.nfe")];

/// Fields owned by the top level; setting them inside `train` is rejected.
const SHADOWED: [(&str, &str); 2] = [("train.seed", "seed"), ("train.mode", "mode")];

/// Artifact locations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_trials() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    /// Episodes, with environment seeds `seed .. seed + n_trials - 1`.
    #[serde(default = "default_trials")]
    pub n_trials: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { n_trials: default_trials() }
    }
}

fn default_samples() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    /// Also write every integration step of every sample.
    #[serde(default)]
    pub trajectories: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { n_samples: default_samples(), trajectories: false }
    }
}

fn default_task() -> TaskConfig {
    serde_json::from_str(r#"{"kind": "reach"}"#).expect("reach task has defaults")
}

/// Everything one command needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Source of all randomness.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_task")]
    pub task: TaskConfig,
    /// Action manifold (`R2`, `S2`, `SPD2`, products joined by `x`); must match the task.
    #[serde(default)]
    pub manifold: Option<String>,
    #[serde(default)]
    pub mode: FlowMode,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    /// One factor per manifold factor; defaults per factor when absent.
    #[serde(default)]
    pub prior: Option<Vec<PriorFactor>>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub properties: PropertyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Subcommands, for command-specific checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Rollout,
    Sample,
    EvalProperties,
    ShowConfig,
}

/// A config that passed every check, with derived values.
#[derive(Clone, Debug)]
pub struct Validated {
    pub config: RunConfig,
    pub spec: ManifoldSpec,
    pub prior: Prior,
}

impl Validated {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.config.seed, mode: self.config.mode, ..self.config.train.clone() }
    }
}

fn require<'a>(p: &'a Option<PathBuf>, field: &str, cmd: &str) -> CliResult<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::field(field, format!("required by {cmd}")))
}

impl RunConfig {
    /// Checks every section and the cross-field rules of `cmd`.
    pub fn validate(self, cmd: Command) -> CliResult<Validated> {
        self.task.validate().map_err(|e| CliError::field("task", e))?;
        let spec = self.task.spec();
        if let Some(m) = &self.manifold {
            let parsed: ManifoldSpec = m.parse().map_err(|e| CliError::field("manifold", e))?;
            if parsed != spec {
                return Err(CliError::field(
                    "manifold",
                    format!("`{m}` does not match the {} task, whose actions live on {spec}", self.task.name()),
                ));
            }
        }
        self.flow.validate().map_err(|e| CliError::field("flow", e))?;
        self.train_checked()?;
        self.policy.validate().map_err(|e| CliError::field("policy", e))?;
        self.integrator.validate(&self.flow).map_err(|e| CliError::field("integrator", e))?;
        let prior = match &self.prior {
            Some(f) => Prior::new(spec.clone(), f.clone()).map_err(|e| CliError::field("prior", e))?,
            None => Prior::default_for(&spec),
        };
        self.properties.validate().map_err(|e| CliError::field("properties", e))?;
        if self.rollout.n_trials == 0 {
            return Err(CliError::field("rollout.n_trials", "must be >= 1"));
        }
        if self.sample.n_samples == 0 {
            return Err(CliError::field("sample.n_samples", "must be >= 1"));
        }
        match cmd {
            Command::GenData => {
                require(&self.paths.dataset, "paths.dataset", "gen-data")?;
            }
            Command::Train => {
                require(&self.paths.dataset, "paths.dataset", "train")?;
                require(&self.paths.checkpoint, "paths.checkpoint", "train")?;
            }
            Command::Rollout => {
                require(&self.paths.checkpoint, "paths.checkpoint", "rollout")?;
                require(&self.paths.output_dir, "paths.output_dir", "rollout")?;
                if !matches!(self.task, TaskConfig::Reach { .. }) {
                    return Err(CliError::field("task", "rollout needs the reach task"));
                }
                if self.policy.unconditional {
                    return Err(CliError::field("policy.unconditional", "rollout needs an observation-conditioned policy"));
                }
            }
            Command::Sample => {
                require(&self.paths.checkpoint, "paths.checkpoint", "sample")?;
                require(&self.paths.output_dir, "paths.output_dir", "sample")?;
                if !self.policy.unconditional {
                    return Err(CliError::field("policy.unconditional", "sample draws unconditional samples; set it to true"));
                }
            }
            Command::EvalProperties | Command::ShowConfig => {}
        }
        Ok(Validated { config: self, spec, prior })
    }

    fn train_checked(&self) -> CliResult<()> {
        let tc = TrainConfig { seed: self.seed, mode: self.mode, ..self.train.clone() };
        tc.validate().map_err(CliError::from)
    }
}

/// Splits `--key value` / `--key=value` tokens into pairs.
pub fn parse_overrides(tokens: &[String]) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        let Some(key) = tok.strip_prefix("--") else {
            return Err(CliError::Config(format!("expected `--key value`, found `{tok}`")));
        };
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| CliError::Config(format!("`--{key}` needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        if key.is_empty() {
            return Err(CliError::Config("empty override key".into()));
        }
        out.push((key, value));
    }
    Ok(out)
}

fn canonical_key(key: &str) -> String {
    let key = key.replace('-', "_");
    ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, full)| full.to_string())
}

/// Sets `path` (dotted) in `doc`, creating objects along the way. The value
/// is read as JSON when it parses, as a string otherwise.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> CliResult<()> {
    let key = canonical_key(key);
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed override key `{key}`")));
    }
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            _ => return Err(CliError::field(&parts[..i].join("."), "is not an object, cannot set a sub-field")),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("loop returns on the last part")
}

fn lookup<'a>(doc: &'a Value, dotted: &str) -> Option<&'a Value> {
    dotted.split('.').try_fold(doc, |v, k| v.get(k))
}

/// Reads the config file (or starts from defaults), applies overrides and
/// deserialises, naming the offending field on failure.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !doc.is_object() {
        return Err(CliError::Config("the config must be a JSON object".into()));
    }
    // Lets `--task.n_demos 10` work without spelling out the default task.
    if let Value::Object(m) = &mut doc {
        m.entry("task").or_insert_with(|| serde_json::json!({"kind": "reach"}));
    }
    for (k, v) in overrides {
        apply_override(&mut doc, k, v)?;
    }
    for (inner, top) in SHADOWED {
        if lookup(&doc, inner).is_some() {
            return Err(CliError::field(inner, format!("set the top-level `{top}` instead")));
        }
    }
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        CliError::field(&path, e.into_inner())
    })
}
