//! Sparse measure-valued optimal control of the 1D heat equation.
//!
//! The control problem
//!
//! ```text
//!   min  1/q |y - y_d|_{L^q}^q + alpha |u|_M + beta |u0|_M,   y_t - y_xx = u,  y(0) = u0
//! ```
//!
//! is solved through its Fenchel predual, a smooth box-constrained problem in
//! the adjoint variable, by a semismooth Newton method. Two space-time
//! discretizations are available: a variational Petrov-Galerkin scheme whose
//! controls are Dirac atoms at the space-time grid points, and a DG(0) in
//! time scheme whose controls are Dirac in space and piecewise constant in
//! time.
//!
//! Module map:
//! - [`grid`]: space-time mesh and control index sets
//! - [`fem`]: P1 matrices and the space-time system matrices
//! - [`oracle`]: Fourier reference states and manufactured data
//! - [`newton`], [`linsolve`]: the predual solver
//! - [`recovery`], [`projection`]: controls, states, diagnostics
//! - [`experiments`]: run configuration and the experiment drivers

// `!(x > 0.0)` is how NaN gets rejected; index loops mirror the formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod experiments;
pub mod fem;
pub mod grid;
pub mod linsolve;
pub mod newton;
pub mod oracle;
pub mod projection;
pub mod recovery;
pub mod sparse;

pub use error::{ConfigError, DataError, GridError, RecoveryError, RunError, SolveError};
pub use fem::{DiscreteSystem, Scheme};
pub use grid::{ControlRegion, IndexSets, SpaceTimeGrid};
pub use newton::{newton_solve, Bounds, IterationRecord, PredualIterate, SolverConfig};
pub use oracle::{DesiredState, PointSource};
pub use recovery::MeasureControl;
