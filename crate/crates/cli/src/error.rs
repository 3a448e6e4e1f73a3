use thiserror::Error;

/// Command failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("numeric divergence: {0}")]
    Diverged(String),

    #[error("{} propert{} failed: {}", .0.len(), if .0.len() == 1 { "y" } else { "ies" }, .0.join(", "))]
    PropertyFailure(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::PropertyFailure(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }

    /// Prefixes a config message with the offending field.
    pub fn field(field: &str, err: impl std::fmt::Display) -> Self {
        let msg = err.to_string();
        let msg = msg.strip_prefix("config error: ").unwrap_or(&msg);
        CliError::Config(format!("{field}: {msg}"))
    }
}

impl From<rfmp::Error> for CliError {
    fn from(e: rfmp::Error) -> Self {
        use rfmp::Error as E;
        match e {
            E::Io(_) | E::Format(_) => CliError::Io(e.to_string()),
            E::Diverged { .. } | E::TrainingDiverged { .. } | E::CutLocus(_) | E::Degenerate(_) => {
                CliError::Diverged(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
