use alloc::boxed::Box;
use alloc::string::String;

use crate::mlp::TrainHistory;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("delta must be positive (got {0})")]
    InvalidDelta(f64),

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("linear system is ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("class {class} has {count} member(s); at least {required} required")]
    SmallClass {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error("non-finite training objective (largest parameter magnitude {max_abs_param:e})")]
    NonFiniteLoss { max_abs_param: f64 },

    #[error("training diverged at epoch {epoch} (objective {objective:e})")]
    Diverged {
        epoch: usize,
        objective: f64,
        history: Box<TrainHistory>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
