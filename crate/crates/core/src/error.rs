use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("voltage magnitude too small for complex phase (|v| = {magnitude:e} at sample {index})")]
    VoltageTooSmall { index: usize, magnitude: f64 },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("target step {target} s is not an integer multiple of source step {source_dt} s")]
    NonIntegerRatio { target: f64, source_dt: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("time step mismatch: model uses {expected} s, data uses {got} s")]
    DtMismatch { expected: f64, got: f64 },

    #[error("non-finite state at t = {t} s")]
    NonFiniteState { t: f64 },

    #[error("oscillator amplitude underflow (|v| = {magnitude:e})")]
    AmplitudeUnderflow { magnitude: f64 },

    #[error("rank-deficient excitation: {0}")]
    RankDeficient(String),

    #[error("undefined R² (zero variance)")]
    ZeroVariance,

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible stratification: {0}")]
    Stratification(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("{}:{line}: {msg}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for failures caused by bad input files, configuration or usage
    /// rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Config(_)
                | Error::Manifest(_)
                | Error::Model(_)
                | Error::InvalidParameter { .. }
                | Error::Io { .. }
                | Error::Stratification(_)
        )
    }
}
