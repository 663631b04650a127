use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} out of range: {value} (allowed {allowed})")]
    OutOfRange {
        what: &'static str,
        value: String,
        allowed: String,
    },

    #[error("power multiplier {0} is not positive; clamp it to the floor before water-filling")]
    DegenerateMultiplier(f64),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("inconsistent observation: {0}")]
    Observation(String),

    #[error("relative value iteration did not converge after {sweeps} sweeps (span {span:e})")]
    NotConverged { sweeps: usize, span: f64 },

    #[error("policy induces a reducible chain with {0} closed classes")]
    Reducible(usize),

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("calibration did not converge: {0}")]
    Calibration(String),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Empty(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }
}
