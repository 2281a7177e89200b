use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("unsupported format version {found:#010x} (supported major {supported})")]
    VersionMismatch { found: u32, supported: u16 },
}

pub type Result<T> = std::result::Result<T, SimError>;
