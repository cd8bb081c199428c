use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A shape, range or argument precondition was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file did not follow its binary or text format.
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    /// Configuration key failed validation.
    #[error("config key `{key}`: {detail}")]
    Config { key: String, detail: String },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at iteration {iter} (lr {lr:e}, loss {loss})")]
    Divergence { iter: usize, lr: f64, loss: f64 },

    /// A metric is undefined for the given input (e.g. no positives).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Non-finite values reached a numeric routine that requires finite input.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn format_err(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        what,
        detail: detail.into(),
    }
}

/// Wraps an I/O error with the path it concerns.
pub(crate) fn io_at(path: &std::path::Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}
