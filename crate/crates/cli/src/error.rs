use leal_core::LealError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {msg}")]
    Config { path: String, msg: String },

    #[error(transparent)]
    Core(#[from] LealError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            _ => 1,
        }
    }

    /// A single JSON line for stderr.
    pub fn to_line(&self) -> String {
        let kind = match self {
            CliError::Usage(_) => "usage",
            CliError::Config { .. } => "config",
            CliError::Core(_) => "runtime",
            CliError::Io { .. } => "io",
            CliError::Failed(_) => "failed",
        };
        let mut obj = serde_json::json!({
            "error": kind,
            "message": self.to_string(),
        });
        if let CliError::Config { path, msg } = self {
            obj["path"] = path.clone().into();
            obj["message"] = msg.clone().into();
        }
        obj.to_string()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}
