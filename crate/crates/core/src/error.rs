use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or constructor argument violates an invariant.
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("configuration key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error(
        "CFL condition violated: dt = {dt:.6e} exceeds dt_max = {dt_max:.6e}; \
         minimal admissible nt = {min_nt}"
    )]
    Cfl { dt: f64, dt_max: f64, min_nt: usize },

    #[error("non-finite value at time level {level}, node {node}")]
    NonFinite { level: usize, node: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("mass mismatch: {0}")]
    Mass(String),

    #[error("negative density {value:e} at time level {level}, node {node}")]
    NegativeDensity { level: usize, node: usize, value: f64 },

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error("Monte-Carlo path left the sanity box: {0}")]
    SanityBox(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the user's input rather than a broken
    /// numerical contract.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. }
                | Error::Config { .. }
                | Error::Cfl { .. }
                | Error::GridMismatch(_)
                | Error::Io { .. }
                | Error::Format { .. }
        )
    }
}
