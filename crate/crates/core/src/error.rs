use thiserror::Error;

pub type Result<T> = std::result::Result<T, SpectfError>;

#[derive(Debug, Error)]
pub enum SpectfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SpectfError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SpectfError::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SpectfError::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        SpectfError::Format { offset, message: msg.into() }
    }

    /// True for failures caused by user input (bad files, bad config) rather
    /// than numerical breakdown during a run.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, SpectfError::Diverged { .. })
    }
}
