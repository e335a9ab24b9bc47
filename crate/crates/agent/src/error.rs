use chrono::{DateTime, Utc};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("descriptor signature is invalid")]
    SignatureInvalid,
    #[error("descriptor expired at {0}")]
    Expired(DateTime<Utc>),
    #[error("descriptor is malformed: {0}")]
    Malformed(String),
    #[error("download failed: {0}")]
    Download(String),
    #[error("image digest mismatch: expected {expected}, got {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("runner failed: {0}")]
    RunnerFailed(String),
    #[error("{0}")]
    Config(String),
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl AgentError {
    /// Process exit code: 2 signature/expiry, 3 download/digest, 4 runner.
    pub fn exit_code(&self) -> u8 {
        match self {
            AgentError::SignatureInvalid | AgentError::Expired(_) | AgentError::Malformed(_) => 2,
            AgentError::Download(_) | AgentError::DigestMismatch { .. } => 3,
            AgentError::RunnerFailed(_) => 4,
            AgentError::Config(_) | AgentError::Io(_) => 1,
        }
    }
}

pub type Result<T, E = AgentError> = std::result::Result<T, E>;
