use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The scenario itself is inconsistent (intersecting surfaces, bad probe, unstable grid).
    #[error("configuration error: {0}")]
    Config(String),
    /// A linear solve or fit could not be completed.
    #[error("solver error: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn solver<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Solver(msg.into()))
}
