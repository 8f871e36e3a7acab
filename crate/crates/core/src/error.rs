use thiserror::Error;

/// Errors raised by grid, operator and solver routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid axis specification: {0}")]
    InvalidAxis(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("axis {axis} is {found}, expected {expected}")]
    AxisRole { axis: usize, expected: &'static str, found: &'static str },
    #[error("axis index {0} out of range")]
    AxisOutOfRange(usize),
    #[error("component mismatch: {0}")]
    ComponentMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid order {order}: {reason}")]
    InvalidOrder { order: f64, reason: String },
    #[error("non-integrable singularity: exponent {exponent} on axis {axis}")]
    NonIntegrable { axis: usize, exponent: f64 },
    #[error("function not differintegrable at order {order}: exponent {exponent} must exceed {bound}")]
    NotDifferintegrable { order: f64, exponent: f64, bound: f64 },
    #[error("unsupported mesh: {0}")]
    UnsupportedMesh(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("overflow: E_alpha({z}) exceeds the representable range (z_max = {z_max})")]
    Overflow { z: f64, z_max: f64 },
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("invalid operator spec: {0}")]
    Spec(String),
    #[error("spectral tail {tail:e} above threshold {threshold:e}")]
    Unresolved { tail: f64, threshold: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
