use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} has length {actual}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value from {0}")]
    NonFiniteValue(&'static str),

    /// sigma*sigma^T is not a positive multiple of K R^-1 K^T.
    #[error("noise is incompatible with control channels (lambda = {lambda}, relative residual = {residual:.3e})")]
    IncompatibleNoise { lambda: f64, residual: f64 },

    #[error("control weight R is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("noise covariance sigma*sigma^T is singular")]
    SingularNoise,

    #[error("path functional minimisation did not converge after {iterations} iterations (|grad|_inf = {grad_norm:.3e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("Hessian of the path functional is not positive definite at the minimiser")]
    IndefiniteHessian,

    #[error("psi estimate underflowed to zero; lambda is too small relative to the terminal cost")]
    DegeneratePsi,

    #[error("grid time step violates the CFL bound: dt = {dt:.3e} > {bound:.3e}")]
    UnstableGrid { dt: f64, bound: f64 },

    #[error("grid solver supports state dimension 1 only, got {0}")]
    DimensionUnsupported(usize),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("control matrix K is singular")]
    SingularK,

    #[error("parse error at row {row}, column {column}: {message}")]
    ParseError {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("time {t} is outside the covered range [{start}, {end}]")]
    CoverageError { t: f64, start: f64, end: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// The variant name, for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::IncompatibleNoise { .. } => "IncompatibleNoise",
            Error::NotPositiveDefinite => "NotPositiveDefinite",
            Error::SingularNoise => "SingularNoise",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::IndefiniteHessian => "IndefiniteHessian",
            Error::DegeneratePsi => "DegeneratePsi",
            Error::UnstableGrid { .. } => "UnstableGrid",
            Error::DimensionUnsupported(_) => "DimensionUnsupported",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::SingularK => "SingularK",
            Error::ParseError { .. } => "ParseError",
            Error::CoverageError { .. } => "CoverageError",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}
