//! Crate-wide error type.
//!
//! Every diagnostic names the violated invariant and carries its measured
//! magnitude, so callers (and the CLI) can report actionable numbers instead
//! of a bare failure.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("Fock space dimension must be at least 2, got {dim}")]
    InvalidDimension { dim: usize },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("not Hermitian: max |rho - rho^dagger| = {max_deviation:.3e} exceeds {tolerance:.3e}")]
    NotHermitian { max_deviation: f64, tolerance: f64 },

    #[error("trace {trace:.17e} violates strict unit-trace tolerance {tolerance:.3e}: deficit {deficit:.3e}")]
    TraceOutOfTolerance {
        trace: f64,
        deficit: f64,
        tolerance: f64,
    },

    #[error("trace deficit {deficit:.3e} exceeds budget {budget:.3e}")]
    TraceDeficitTooLarge { deficit: f64, budget: f64 },

    #[error("not positive semidefinite: min eigenvalue {min_eigenvalue:.3e} below -{tolerance:.3e}")]
    NotPositiveSemidefinite {
        min_eigenvalue: f64,
        tolerance: f64,
    },

    #[error("Fock level {level} out of range for dimension {dim}")]
    LevelOutOfRange { level: usize, dim: usize },

    #[error("invalid parameter {name} = {value}: requires {constraint}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("dimension {dim} too small: truncation tail {tail:.3e} exceeds budget {budget:.3e}; need dim >= {required_dim}")]
    TruncationTooSmall {
        dim: usize,
        required_dim: usize,
        tail: f64,
        budget: f64,
    },

    #[error("Kraus cutoff {cutoff} incompatible with dimension {dim}")]
    CutoffTooLarge { cutoff: usize, dim: usize },

    #[error("input support too close to the truncation edge: mass {mass:.3e} at levels >= {limit} exceeds {budget:.3e}; recommend dim >= {recommended_dim}")]
    SupportTooHigh {
        mass: f64,
        limit: usize,
        budget: f64,
        recommended_dim: usize,
    },

    #[error("integration step must be positive, got {step}")]
    NonPositiveStep { step: f64 },

    #[error("integration step {step} violates kappa*step <= {max}")]
    StepTooLarge { step: f64, max: f64 },

    #[error("integration unstable: trace drift {drift:.3e} exceeds {limit:.3e}")]
    IntegrationUnstable { drift: f64, limit: f64 },

    #[error("time grid must be ascending and nonnegative")]
    InvalidTimeGrid,
}
