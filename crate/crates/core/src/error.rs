use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("simulation blow-up at step {step}: {reason}")]
    BlowUp { step: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("query point outside domain: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("sweep failed: {0}")]
    Sweep(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
