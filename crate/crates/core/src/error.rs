use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e} N)")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("infeasible pose: stimulus initially intersects {intersecting} of {total} skin nodes")]
    InfeasiblePose { intersecting: usize, total: usize },

    #[error("system is rank deficient at lambda = 0; use a ridge weight lambda > 0")]
    RankDeficient,

    #[error("incomplete pairing, missing counterparts for ids: {ids:?}")]
    IncompletePairing { ids: Vec<String> },

    #[error("cannot stratify class {class}: {count} samples is below the split granularity")]
    Stratification { class: usize, count: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::Validation(_)
            | Error::Contract(_)
            | Error::Stratification { .. }
            | Error::IncompletePairing { .. } => 1,
            Error::NonConvergence { .. } | Error::InfeasiblePose { .. } | Error::RankDeficient => 2,
            Error::Io { .. } | Error::Image { .. } | Error::Format { .. } => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
