//! Error type shared across the crate.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Malformed user input: bad flags, bad config values, degenerate setups.
    Invalid(String),
    /// Missing or malformed data on disk.
    Data(String),
    /// A forward/backward pass or optimizer step produced a non-finite value.
    /// Carries the parameter or tensor path that went bad.
    NonFinite(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::NonFinite(path) => write!(f, "non-finite value in {path}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
