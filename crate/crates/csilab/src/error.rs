use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum CsiError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bitstream decode error: {0}")]
    Decode(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, CsiError>;

impl CsiError {
    /// Process exit code for the CLI: 2 config, 3 io, 4 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            CsiError::InvalidArgument(_) | CsiError::Config(_) | CsiError::Json(_) => 2,
            CsiError::Io(_) | CsiError::Csv(_) | CsiError::Decode(_) => 3,
            CsiError::Numeric(_) => 4,
        }
    }
}
