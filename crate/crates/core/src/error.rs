use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point set is empty")]
    EmptySet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("projection error: {0}")]
    Projection(String),
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("nothing to fit: every target part is empty and no landmarks were given")]
    NothingToFit,
    #[error("numerical abort: {0}")]
    NumericalAbort(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}
