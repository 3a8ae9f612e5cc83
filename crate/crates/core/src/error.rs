use thiserror::Error;

use crate::resources::ResourceVector;

/// An allocation that does not fit in the pool. The pool is left unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("insufficient resources: demand {demand}, available {available}")]
pub struct Insufficient {
    pub demand: ResourceVector,
    pub available: ResourceVector,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("release of {amount} underflows allocation {allocated}")]
    Underflow {
        allocated: ResourceVector,
        amount: ResourceVector,
    },

    #[error("unknown slice id {0}")]
    UnknownSlice(u64),

    #[error("accounting violation: {0}")]
    Accounting(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed policy file: {0}")]
    PolicyFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
