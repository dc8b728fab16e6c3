use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes or dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An API was called out of order or with arguments outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// A NaN or infinity showed up where a finite value is required.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("format error: {0}")]
    Format(String),

    /// A stored artifact does not match the environment it is being bound to.
    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
