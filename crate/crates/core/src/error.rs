use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible with the operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A layer, codec or experiment is configured inconsistently.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input that cannot be processed, e.g. an all-zero feature at power normalization.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("training error in {param}: {reason}")]
    Training { param: String, reason: String },

    #[error("training diverged at step {step}, iteration {iteration}: {reason}")]
    Diverged {
        step: u8,
        iteration: usize,
        reason: String,
    },

    /// Malformed container (checkpoint, dataset, bitstream).
    #[error("format error: {0}")]
    Format(String),

    /// Checkpoint does not match the model it is loaded into.
    #[error("load error: tensor `{name}`: {reason}")]
    Load { name: String, reason: String },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
