use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("basis for m={m}, o={o} is too large to index")]
    DimensionOverflow { m: usize, o: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("operator mismatch: {0}")]
    Mismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("incompatible reduced density matrices at order {order}: defect {defect:.3e}")]
    Incompatible { order: usize, defect: f64 },

    #[error("eigensolver did not converge for dimension {dim}")]
    EigenNoConvergence { dim: usize },

    #[error("correction has no solution: residual {residual:.3e} for |b| = {bnorm:.3e}")]
    NoSolution { residual: f64, bnorm: f64 },

    #[error("singular coefficient system in {0}")]
    Singular(&'static str),

    #[error("integrator step size {h:.3e} fell below minimum at t = {t}")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Failures that a smaller integrator step may avoid.
    pub fn is_recoverable(&self) -> bool {
        matches!(self, Error::NoSolution { .. })
    }
}
