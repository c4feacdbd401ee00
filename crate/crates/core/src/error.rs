//! Error taxonomy shared by every module in the crate.
//!
//! The variants map onto the CLI exit-code contract: usage and contract
//! problems exit 1, data/format problems exit 2, numeric failures exit 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's contract.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An index (class, tensor element) is out of range.
    #[error("index error: {0}")]
    Index(String),

    /// A caller violated a documented precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// A computation produced NaN/Inf or otherwise lost numeric meaning.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A file or byte stream does not match its declared format.
    #[error("format error: {0}")]
    Format(String),

    /// A configuration file or override could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 usage/config, 2 data/format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_) | Error::Index(_) | Error::Contract(_) | Error::Config(_) => 1,
            Error::Format(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}
