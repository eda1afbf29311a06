use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible watermarks: length {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("watermark length must be positive")]
    EmptyWatermark,

    #[error("invalid bit string: {0}")]
    InvalidBits(String),

    #[error("codebook needs at least {needed} entries, has {actual}")]
    TooFewEntries { needed: usize, actual: usize },

    #[error("user index {index} out of range for codebook of {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate user id `{0}`")]
    DuplicateUser(String),

    #[error("watermark already assigned to user `{0}`")]
    DuplicateWatermark(String),

    #[error("codebook is full: every {0}-bit watermark is assigned")]
    CodebookFull(usize),

    #[error("codebook parse error at line {line}: {kind}")]
    Parse { line: usize, kind: ParseErrorKind },

    #[error("parameter out of range: {0}")]
    Domain(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("bound violation: {0}")]
    BoundViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Distinct failure modes when reading a codebook file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("malformed header `{0}`")]
    MalformedHeader(String),
    #[error("malformed record `{0}`")]
    MalformedRecord(String),
    #[error("watermark has {actual} hex digits, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("padding bits beyond n are set")]
    PaddingBits,
    #[error("duplicate user id `{0}`")]
    DuplicateUser(String),
    #[error("duplicate watermark for user `{0}`")]
    DuplicateWatermark(String),
    #[error("header declares {declared} records, found {found}")]
    CountMismatch { declared: usize, found: usize },
}

impl Error {
    pub(crate) fn parse(line: usize, kind: ParseErrorKind) -> Self {
        Error::Parse { line, kind }
    }
}
