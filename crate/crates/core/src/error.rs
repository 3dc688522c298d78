//! Crate-wide error type.

use std::path::PathBuf;

use crate::fc_language::FcParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid function `{api_name}`, field `{field}`: {message}")]
    Validation {
        api_name: String,
        field: String,
        message: String,
    },

    #[error(transparent)]
    FcParse(#[from] FcParseError),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("backend failed after {} attempt(s): {}", attempts.len(), attempts.join("; "))]
    Transport { attempts: Vec<String> },

    #[error("judgment failed: {0}")]
    Judgment(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub fn validation(api_name: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            api_name: api_name.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the CLI: 2 for bad input, 3 for backend trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Transport { .. } | Error::Protocol(_) | Error::Judgment(_) => 3,
            _ => 2,
        }
    }
}
