use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid space specification: {0}")]
    InvalidSpec(String),

    #[error("graph is disconnected into {} components: {components:?}", components.len())]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("measure must be strictly positive, got {value} at point {index}")]
    NonPositiveMeasure { index: usize, value: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("marginal masses differ: {first} vs {second}")]
    MassMismatch { first: f64, second: f64 },

    #[error("measure charges point {index}, which has no mass under the plan's first marginal")]
    NotAbsolutelyContinuous { index: usize },

    #[error("transport simplex stalled after {iterations} pivots; trace: {trace:?}")]
    SimplexStalled {
        iterations: usize,
        trace: Vec<String>,
    },

    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    LinearSolve { residual: f64, tolerance: f64 },

    #[error("inner solver did not converge after {iterations} iterations; trace: {trace:?}")]
    NoConvergence {
        iterations: usize,
        trace: Vec<String>,
    },

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::InvalidArgument(format!(
            "{what} has a non-finite entry at index {i}"
        ))),
    }
}
