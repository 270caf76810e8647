use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Each variant maps to one CLI exit code (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate normalization: theta^2 = {theta2} (need a positive variance scale)")]
    DegenerateNormalization { theta2: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("enumeration state space too large: {size} outcomes (limit {limit})")]
    EnumerationTooLarge { size: f64, limit: f64 },

    #[error("resource budget exceeded: {required} kernel evaluations requested, budget is {budget}")]
    Budget { required: f64, budget: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}, line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }

    /// Process exit code: 2 for configuration problems, 3 for budget overruns.
    /// Statistical failures (exit 1) are not errors and are decided by the caller.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Budget { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
