#[derive(Debug, thiserror::Error)]
pub enum SwarmError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("target unreachable: {0}")]
    TargetUnreachable(String),
    #[error("reports are not comparable: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SwarmError> = std::result::Result<T, E>;
