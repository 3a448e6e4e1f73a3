use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("point lies on the cut locus: {0}")]
    CutLocus(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("manifold mismatch: expected {expected}, got {got}")]
    SpecMismatch { expected: String, got: String },

    #[error("operation `{op}` does not support manifold {spec}")]
    UnsupportedManifold { op: &'static str, spec: String },

    #[error("invalid manifold string `{input}`: {reason}")]
    ParseSpec { input: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("integration diverged at step {step}")]
    Diverged { step: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
