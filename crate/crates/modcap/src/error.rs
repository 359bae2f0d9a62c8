//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape disagreement between two operands; both shapes are named.
    #[error("dimension mismatch in {context}: {lhs:?} vs {rhs:?}")]
    Dimension {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration (dimensions, inventories, presets).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed dataset / lexicon / trace file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Corrupt or incompatible checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A loss term went non-finite during training.
    #[error("training diverged: loss term `{term}` is not finite (epoch {epoch}, iteration {iteration})")]
    Diverged {
        term: String,
        epoch: usize,
        iteration: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dimension(context: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            context: context.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
