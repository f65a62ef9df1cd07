use alloc::string::String;

/// Errors raised by the numerical core.
///
/// `Validation` and `Parse` describe bad inputs or configurations; the rest
/// indicate numerical or internal failures.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("eigensolver did not converge (max residual {residual:e})")]
    NoConvergence { residual: f64 },

    #[error("isolated point {0}: kernel row sums to zero")]
    IsolatedPoint(usize),

    #[error("kernel is disconnected ({components} components, sizes {sizes:?})")]
    Disconnected { components: usize, sizes: alloc::vec::Vec<usize> },

    #[error("non-finite loss at epoch {epoch} with learning rate {learning_rate}; the learning rate is too high")]
    NonFiniteLoss { epoch: usize, learning_rate: f64 },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors caused by user input rather than by the library.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation(_) | Error::DimensionMismatch { .. } | Error::Disconnected { .. } | Error::IsolatedPoint(_)
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
