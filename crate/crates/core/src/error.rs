use thiserror::Error;

/// Errors surfaced by the simulation and verification layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("beta must lie in (0, 2), got {0}")]
    InvalidBeta(f64),

    #[error("grid mismatch: expected {expected} values, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("non-finite field value detected")]
    NonFinite,

    #[error("field blow-up at step {step}")]
    BlowUp { step: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("sinkhorn did not converge after {max_iter} iterations (residual {residual:.3e})")]
    SinkhornNonConvergence { max_iter: usize, residual: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("empty record list")]
    EmptyRecords,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
