use thiserror::Error;

/// Errors produced anywhere in the translation pipeline.
#[derive(Debug, Error)]
pub enum CmdmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("index {index} out of range [{min}, {max}]")]
    Index {
        index: usize,
        min: usize,
        max: usize,
    },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("training diverged at step {step}: {message}")]
    Training { step: u64, message: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("incompatible artifact: {0}")]
    Compatibility(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CmdmError {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        CmdmError::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CmdmError::InvalidArgument(msg.into())
    }

    /// Process exit code for the command-line front end, one per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdmError::InvalidArgument(_) => 2,
            CmdmError::Shape { .. } => 3,
            CmdmError::Numeric(_) => 4,
            CmdmError::Index { .. } => 5,
            CmdmError::InvalidState(_) => 6,
            CmdmError::Training { .. } => 7,
            CmdmError::Parse { .. } => 8,
            CmdmError::NotFound(_) => 9,
            CmdmError::Compatibility(_) => 10,
            CmdmError::Io(_) => 11,
        }
    }
}

pub type Result<T> = std::result::Result<T, CmdmError>;
