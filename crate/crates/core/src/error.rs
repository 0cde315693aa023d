use thiserror::Error;

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank bound violated: {0}")]
    RankBound(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing calibration entry for mode {mode}, norm {norm}")]
    MissingCalibration { mode: String, norm: String },

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("format error: {0}")]
    Format(#[from] FormatError),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Malformed-file classes for the binary containers. Each corruption class
/// maps to exactly one variant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),

    #[error("unknown element type code {0}")]
    UnknownElementType(u8),

    #[error("unknown model kind code {0}")]
    UnknownModelKind(u8),

    #[error("unknown norm code {0}")]
    UnknownNorm(u8),

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("truncated file: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("declared ranks imply {expected} payload bytes, found {found}")]
    PayloadSizeMismatch { expected: usize, found: usize },

    #[error("stored compression ratio {stored} disagrees with ranks ({computed})")]
    CrMismatch { stored: f64, computed: f64 },

    #[error("payload contains non-finite values")]
    NonFinitePayload,
}
