use std::fmt;

/// Errors raised by the laboratory.
///
/// Variants mirror the failure classes the CLI maps to exit codes:
/// configuration and usage problems are caller mistakes, training errors
/// come from numerics going bad mid-run, and I/O errors from the filesystem.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    pub fn training(msg: impl fmt::Display) -> Self {
        Error::Training(msg.to_string())
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Error::Usage(msg.to_string())
    }
}

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::config(format!(
            "{what}: dimension mismatch (got {got}, expected {expected})"
        )));
    }
    Ok(())
}
