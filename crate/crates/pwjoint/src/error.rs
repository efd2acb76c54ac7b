use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("point ({z:.6e}, {x:.6e}) m lies outside the imaging grid")]
    PointOutsideGrid { z: f64, x: f64 },

    #[error("profile never drops below half maximum around ({iz}, {ix}): unresolved")]
    Unresolved { iz: usize, ix: usize },

    #[error("metric undefined: {0}")]
    MetricUndefined(&'static str),

    #[error("inner solver produced non-finite values after {iterations} iterations (gradient norms: {trace:?})")]
    NonFinite { iterations: usize, trace: Vec<f64> },

    #[error("solver diverged at iteration {iteration}: objective {objective:.3e} exceeds 1e6 x initial {initial:.3e}")]
    Diverged {
        iteration: usize,
        objective: f64,
        initial: f64,
        history: Vec<f64>,
    },

    #[error("{path}: bad magic")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u16,
        expected: u16,
    },

    #[error("{path}: truncated payload ({found} of {expected} bytes)")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: malformed container: {reason}")]
    Structural { path: PathBuf, reason: String },

    #[error("{path}: expected a `{expected}` container, found `{found}`")]
    KindMismatch {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },

    #[error("dataset not found: {path}\n  hint: {hint}")]
    DatasetNotFound { path: PathBuf, hint: &'static str },

    #[error("dataset {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },

    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
