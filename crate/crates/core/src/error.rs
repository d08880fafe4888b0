use thiserror::Error;

/// Errors raised by the solver pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("input contains NaN or infinite entries ({0})")]
    NonFiniteInput(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("weight {index} is not strictly positive and finite ({value})")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("index {n} is outside the available range [{lo}, {hi}]")]
    IndexOutOfWindow { n: i64, lo: i64, hi: i64 },

    #[error("coefficient A_{n} is numerically singular (condition number {condition:e})")]
    SingularCoefficient { n: i64, condition: f64 },

    #[error("{which} is not a projector (defect {defect:e})")]
    NotAProjector { which: &'static str, defect: f64 },

    #[error("projectors do not commute (||PQ - QP|| = {defect:e})")]
    NotCommuting { defect: f64 },

    #[error("tail bound {tail_bound:e} exceeds tolerance {tol:e}; increase tail_len")]
    WindowTooSmall { tail_bound: f64, tol: f64 },

    #[error("boundary limit at {side} infinity has not settled (step {step:e} > {tol:e})")]
    LimitNotSettled { side: &'static str, step: f64, tol: f64 },

    #[error("strong pseudo-inverse requires a diagonal reduced operator: {0}")]
    NonDiagonalStrongCase(String),

    #[error("iterate left the admissible domain at n = {n} (distance {distance:e} > radius {radius:e})")]
    OutsideDomain { n: i64, distance: f64, radius: f64 },

    #[error("no convergence after {iterations} iterations (last residual {residual:e}, ratio {ratio:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        ratio: f64,
    },

    #[error("invalid window: {0}")]
    InvalidWindow(String),
}

impl Error {
    /// Stable machine-readable identifier for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFiniteInput(_) => "NonFiniteInput",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonPositiveWeight { .. } => "NonPositiveWeight",
            Error::IndexOutOfWindow { .. } => "IndexOutOfWindow",
            Error::SingularCoefficient { .. } => "SingularCoefficient",
            Error::NotAProjector { .. } => "NotAProjector",
            Error::NotCommuting { .. } => "NotCommuting",
            Error::WindowTooSmall { .. } => "WindowTooSmall",
            Error::LimitNotSettled { .. } => "LimitNotSettled",
            Error::NonDiagonalStrongCase(_) => "NonDiagonalStrongCase",
            Error::OutsideDomain { .. } => "OutsideDomain",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::InvalidWindow(_) => "InvalidWindow",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
