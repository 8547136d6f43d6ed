use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("cannot read config file {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("step size underflow at t = {t:e} s (h = {h:e} s)")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-finite value in derivative at t = {t:e} s, state = ({v1:e}, {v2:e})")]
    NonFinite { t: f64, v1: f64, v2: f64 },

    #[error("state component {component} went negative ({value:e}) beyond abs_tol at t = {t:e} s")]
    NegativeState { t: f64, component: usize, value: f64 },

    #[error("photovoltaic solver did not converge in bracket [{lo:e}, {hi:e}] A")]
    PvNoConvergence { lo: f64, hi: f64 },

    #[error("terminal voltage {v_out} V exceeds open-circuit voltage {v_oc} V")]
    AboveOpenCircuit { v_out: f64, v_oc: f64 },

    #[error("trajectory not settled: spread {spread:.4} of final segment exceeds band {band}")]
    NotSettled { spread: f64, band: f64 },

    #[error("sequence length {len} is not a multiple of {symbol_samples} samples per symbol")]
    LengthMismatch { len: usize, symbol_samples: usize },

    #[error("pump ratio {0} is at or below threshold; no oscillatory relaxation")]
    BelowThreshold(f64),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation(_) | Error::ConfigRead { .. } => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
