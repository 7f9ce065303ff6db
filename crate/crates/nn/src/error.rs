use thiserror::Error;

/// Errors surfaced by tensor kernels, layers, the optimizer, and checkpoint I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or weight had an unexpected shape. Names the operation and the
    /// offending dimensions so the caller can locate the wiring mistake.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: String, detail: String },

    /// A non-finite value (NaN or infinity) appeared where a finite number was
    /// required, e.g. in a gradient handed to the optimizer.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Parameter-store bookkeeping failure (duplicate or unknown name).
    #[error("parameter error: {0}")]
    Param(String),

    /// A checkpoint file was malformed or inconsistent with the model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Failure inside a finite-difference case supplied by a downstream
    /// crate; the gradient-check harness itself is error-agnostic.
    #[error("gradient-check case: {0}")]
    Case(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape { op: op.into(), detail: detail.into() }
    }
}
