use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The transform of the base vector had a non-negligible imaginary part,
    /// so the base vector was not the first column of a symmetric BCCB matrix.
    #[error("base vector lacks BCCB symmetry (relative imaginary residue {residue:e})")]
    NonSymmetricBase { residue: f64 },

    #[error("embedding is not positive definite (smallest eigenvalue {min_eig:e})")]
    NegativeEigenvalue { min_eig: f64 },

    #[error("PCG did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("PCG breakdown: non-positive curvature p'Ap = {curvature:e}")]
    BreakdownZeroCurvature { curvature: f64 },

    #[error("conditioning covariance of block {block} is singular")]
    SingularConditioningSet { block: usize },

    #[error("dense covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("optimizer failed: {0}")]
    OptimizerFailed(String),

    #[error("Whittle likelihood requires a complete lattice")]
    IncompleteLattice,

    #[error("parameters outside prior support: {0}")]
    OutOfSupport(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("no {kind} registered under the name '{name}'")]
    UnknownStrategy { kind: &'static str, name: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
