use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the command-line harness to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Physics,
    Divergence,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("Froude undefined: exit density equals ambient density")]
    FroudeUndefined,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("inconsistent density: rho_cl = {rho} kg/m3 gives mass fraction {mass_fraction}")]
    InconsistentDensity { rho: f64, mass_fraction: f64 },

    #[error("flow not choked; use subsonic path (P0/P_inf = {ratio:.4}, critical ratio {critical:.4})")]
    NotChoked { ratio: f64, critical: f64 },

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("invariant violated at s = {s:.6e} m: {what}")]
    Invariant { s: f64, what: String },

    #[error("step halving did not converge after {halvings} halvings (last relative change {change:.3e})")]
    StepControl { halvings: usize, change: f64 },

    #[error("position s/d = {position} outside [{min}, {max}]")]
    OutOfRange { position: f64, min: f64, max: f64 },

    #[error("autodiff: {0}")]
    Autodiff(#[from] crate::autodiff::AdError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no sensors")]
    NoSensors,

    #[error("training diverged at epoch {epoch} (loss {loss:.3e}, initial {initial:.3e})")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. } | Error::Config(_) | Error::Csv { .. } | Error::Json(_) => {
                ErrorKind::Parse
            }
            Error::Diverged { .. } => ErrorKind::Divergence,
            Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Physics,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
