use thiserror::Error;

/// Errors produced by the unmixing library.
#[derive(Debug, Error)]
pub enum UnmixError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("gram matrix is not positive semidefinite")]
    NotPsd,

    #[error("qp did not converge after {iterations} iterations (kkt residual {residual:.3e})")]
    QpNonConvergence { iterations: usize, residual: f64 },

    #[error("qp solution infeasible: {0}")]
    QpInfeasible(String),

    #[error("pixel {pixel} failed: {source}")]
    PixelSolve {
        pixel: usize,
        #[source]
        source: Box<UnmixError>,
    },
}

pub type Result<T> = std::result::Result<T, UnmixError>;

impl UnmixError {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        UnmixError::DimensionMismatch(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        UnmixError::InvalidArgument(msg.into())
    }

    pub(crate) fn at_pixel(self, pixel: usize) -> Self {
        UnmixError::PixelSolve {
            pixel,
            source: Box::new(self),
        }
    }
}
