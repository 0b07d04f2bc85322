//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("lattice mismatch: expected {expected} points, found {found}")]
    LatticeMismatch { expected: usize, found: usize },

    #[error("coordinate {value} of datum {index} lies outside the lattice domain")]
    DatumOutsideDomain { index: usize, value: f64 },

    #[error("datum {index} has zero likelihood under the current potential")]
    ZeroLikelihood { index: usize },

    #[error("datum {index} has coincident coordinates (excluded state)")]
    CoincidentCoordinates { index: usize },

    #[error("overlap matrix of datum {index} is singular")]
    SingularOverlap { index: usize },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("preconditioner is not positive definite on the optimized subspace")]
    SingularPreconditioner,

    #[error("line search stalled after {shrinks} step reductions at iteration {iteration}")]
    LineSearchStall {
        iteration: usize,
        shrinks: usize,
        trace: Vec<f64>,
    },

    #[error("self-consistent field did not converge within {iterations} iterations (last residual {last_residual:e})")]
    ScfNonConvergence {
        iterations: usize,
        last_residual: f64,
        residual_trace: Vec<f64>,
    },

    #[error("degenerate levels at the Fermi surface (gap {gap:e})")]
    FermiDegeneracy { gap: f64 },

    #[error("orbital response iteration did not converge within {iterations} sweeps (residual {last_residual:e})")]
    ResponseNonConvergence {
        iterations: usize,
        last_residual: f64,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("density is not normalized (deviation {deviation:e})")]
    UnnormalizedDensity { deviation: f64 },
}
