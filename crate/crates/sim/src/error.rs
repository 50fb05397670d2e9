use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("length mismatch: expected {expected} bytes, found {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcFailure { stored: u32, computed: u32 },
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("invalid dims {0:?}")]
    InvalidDims(Vec<usize>),
    #[error("extent {0} does not fit the wire format")]
    ExtentOverflow(usize),
    #[error("trace: {0}")]
    Trace(String),
    #[error("session: {0}")]
    Session(String),
    #[error(transparent)]
    Core(#[from] mcl_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
