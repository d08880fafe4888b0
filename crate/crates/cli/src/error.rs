use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config at {pointer}: {message}")]
    ConfigInvalid { pointer: String, message: String },

    #[error("cannot access {path}: {message}")]
    Io { path: String, message: String },

    #[error(transparent)]
    Solver(#[from] dichotomy::Error),

    #[error("oracle difference {max_error:e} exceeds threshold {threshold:e}")]
    OracleMismatch { max_error: f64, threshold: f64 },
}

#[derive(Serialize)]
struct Record<'a> {
    kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pointer: Option<&'a str>,
}

#[derive(Serialize)]
struct Envelope<'a> {
    error: Record<'a>,
}

impl CliError {
    pub fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::ConfigInvalid {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::ConfigInvalid { .. } => "ConfigInvalid",
            CliError::Io { .. } => "Io",
            CliError::Solver(e) => e.kind(),
            CliError::OracleMismatch { .. } => "OracleMismatch",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid { .. } | CliError::Io { .. } => 2,
            CliError::Solver(_) => 3,
            CliError::OracleMismatch { .. } => 1,
        }
    }

    /// One-line JSON error record for stderr.
    pub fn record(&self) -> String {
        let (pointer, message) = match self {
            CliError::ConfigInvalid { pointer, message } => (Some(pointer.as_str()), message.clone()),
            other => (None, other.to_string()),
        };
        let env = Envelope {
            error: Record {
                kind: self.kind(),
                message,
                pointer,
            },
        };
        serde_json::to_string(&env).expect("error record serializes")
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
