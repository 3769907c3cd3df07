use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("out of memory: requested {requested} bytes with {live} live, cap {cap}")]
    OutOfMemory {
        requested: usize,
        live: usize,
        cap: usize,
    },

    #[error("{op}: non-finite value at {position}")]
    NonFinite { op: &'static str, position: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("tensor format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        msg: msg.into(),
    })
}
