use thiserror::Error;

use crate::grid::ControlRegion;
use crate::newton::{IterationRecord, PredualIterate};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid needs at least one interior node")]
    NoNodes,
    #[error("invalid spatial interval ({a}, {b})")]
    BadInterval { a: f64, b: f64 },
    #[error("need at least two time points, got {0}")]
    TooFewTimePoints(usize),
    #[error("time points must start at 0, got {0}")]
    TimeOrigin(f64),
    #[error("time points not strictly increasing at index {k}")]
    NonMonotoneTime { k: usize },
    #[error("control region {0:?} is not relatively compact in the space-time cylinder")]
    RegionNotCompact(ControlRegion),
    #[error("grid too coarse for control region: no node falls inside it")]
    TooCoarse,
    #[error("no time interval lies inside the control window; DG controls are empty")]
    EmptyIntervalSet,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("non-finite desired-state sample at node j={j}, interval k={k}")]
    NonFinite { j: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("sample point of interval {k} lies less than half a step after the source time")]
    TooCloseToSource { k: usize },
    #[error("exponent q={0} outside (1, 2]")]
    Exponent(f64),
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("Newton did not converge in {} iterations (best residual {best_residual:.3e})", log.len())]
    MaxIter { best: Box<PredualIterate>, best_residual: f64, log: Vec<IterationRecord> },
    #[error("regularized Newton matrix is not positive definite (pivot {pivot} = {value:.3e})")]
    Singular { pivot: usize, value: f64 },
    #[error("active set of {active} constraints needs a {bytes:.2e}-byte Schur complement")]
    TooLarge { active: usize, bytes: f64 },
    #[error("invalid solver input: {0}")]
    Input(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("adjoint residual off the control index set too large: max {max:.3e} at {worst:?} (tol {tol:.3e})")]
    OffIndexResidual { max: f64, tol: f64, worst: Vec<(usize, f64)> },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("output error: {0}")]
    Output(String),
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Output(e.to_string())
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Output(e.to_string())
    }
}
