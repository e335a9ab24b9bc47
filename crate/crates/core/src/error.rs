use thiserror::Error;

use crate::identity::Role;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping of domain errors, used by transports to pick a status code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Unauthenticated,
    Forbidden,
    NotFound,
    Validation,
    Conflict,
    Upstream,
    Internal,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Error {
    // identity and groups
    #[error("username or email already registered")]
    DuplicateIdentity,
    #[error("password must be at least {min} characters")]
    WeakPassword { min: usize },
    #[error("invalid username or password")]
    BadCredentials,
    #[error("role `{0}` is not held by this account")]
    RoleNotHeld(String),
    #[error("this operation requires the {0} role")]
    RoleRequired(Role),
    #[error("reset ticket is invalid, expired or already used")]
    TicketInvalid,
    #[error("a group with this name already exists")]
    DuplicateGroupName,
    #[error("already a member of this group")]
    AlreadyMember,
    #[error("not a member of this group")]
    NotMember,
    #[error("the group owner cannot leave; delete the group instead")]
    OwnerCannotLeave,
    #[error("only the owner may do this")]
    NotOwner,
    #[error("group not found")]
    GroupNotFound,
    #[error("this application and tag are already linked to the group")]
    DuplicateLink,
    #[error("authentication required")]
    Unauthenticated,
    #[error("requested scopes exceed the caller's scopes")]
    ScopeExceeded,

    // registry
    #[error("application not found")]
    AppNotFound,
    #[error("image not found")]
    ImageNotFound,
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("upload exceeds the limit of {limit} bytes")]
    TooLarge { limit: u64 },
    #[error("upload is empty")]
    EmptyUpload,
    #[error("image is referenced by a live instance")]
    ImageInUse,
    #[error("application still has images or instances")]
    HasDependents,

    // vault
    #[error("sealed secret failed authentication")]
    SealBroken,
    #[error("{0} not found")]
    NotFound(&'static str),
    #[error("credential is in use by a live instance")]
    InUse,

    // orchestrator
    #[error("provider rejected the request: {code}: {message}")]
    ProviderRejected { code: String, message: String },
    #[error("provider capacity exhausted: {0}")]
    QuotaExceeded(String),
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("instance unknown at provider")]
    InstanceUnknownAtProvider,
    #[error("instance already in a terminal state")]
    AlreadyTerminal,

    // local launcher
    #[error("application has no local client image")]
    NoLocalImage,
    #[error("tag is not available to this user for this application")]
    InvalidTag,
    #[error("unknown launch descriptor")]
    UnknownDescriptor,
    #[error("run already reported for this descriptor")]
    DuplicateReport,
    #[error("launch descriptor expired")]
    DescriptorExpired,
    #[error("launch descriptor signature invalid")]
    SignatureInvalid,

    // storage
    #[error("migration {version} failed: {reason}")]
    MigrationFailed { version: u32, reason: String },
    #[error("transaction conflict persisted after retries")]
    ConflictRetryExhausted,
    #[error("transaction conflict")]
    Conflict,
    #[error("nested write transactions are not supported")]
    NestedTransaction,
    #[error("storage error: {0}")]
    Storage(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable code used in error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DuplicateIdentity => "duplicate_identity",
            Error::WeakPassword { .. } => "weak_password",
            Error::BadCredentials => "bad_credentials",
            Error::RoleNotHeld(_) => "role_not_held",
            Error::RoleRequired(_) => "role_required",
            Error::TicketInvalid => "ticket_invalid",
            Error::DuplicateGroupName => "duplicate_group_name",
            Error::AlreadyMember => "already_member",
            Error::NotMember => "not_member",
            Error::OwnerCannotLeave => "owner_cannot_leave",
            Error::NotOwner => "not_owner",
            Error::GroupNotFound => "group_not_found",
            Error::DuplicateLink => "duplicate_link",
            Error::Unauthenticated => "unauthenticated",
            Error::ScopeExceeded => "scope_exceeded",
            Error::AppNotFound => "app_not_found",
            Error::ImageNotFound => "image_not_found",
            Error::ValidationFailed(_) => "validation_failed",
            Error::UnknownProvider(_) => "unknown_provider",
            Error::TooLarge { .. } => "too_large",
            Error::EmptyUpload => "empty_upload",
            Error::ImageInUse => "image_in_use",
            Error::HasDependents => "has_dependents",
            Error::SealBroken => "seal_broken",
            Error::NotFound(_) => "not_found",
            Error::InUse => "in_use",
            Error::ProviderRejected { .. } => "provider_rejected",
            Error::QuotaExceeded(_) => "quota_exceeded",
            Error::ProviderUnreachable(_) => "provider_unreachable",
            Error::InstanceUnknownAtProvider => "instance_unknown_at_provider",
            Error::AlreadyTerminal => "already_terminal",
            Error::NoLocalImage => "no_local_image",
            Error::InvalidTag => "invalid_tag",
            Error::UnknownDescriptor => "unknown_descriptor",
            Error::DuplicateReport => "duplicate_report",
            Error::DescriptorExpired => "descriptor_expired",
            Error::SignatureInvalid => "signature_invalid",
            Error::MigrationFailed { .. } => "migration_failed",
            Error::ConflictRetryExhausted => "conflict_retry_exhausted",
            Error::Conflict => "conflict",
            Error::NestedTransaction => "nested_transaction",
            Error::Storage(_) => "storage",
            Error::Io(_) => "io",
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use ErrorKind::*;
        match self {
            Error::BadCredentials | Error::Unauthenticated => Unauthenticated,
            Error::RoleNotHeld(_)
            | Error::RoleRequired(_)
            | Error::NotOwner
            | Error::ScopeExceeded
            | Error::InvalidTag => Forbidden,
            Error::GroupNotFound
            | Error::AppNotFound
            | Error::ImageNotFound
            | Error::NotFound(_)
            | Error::UnknownDescriptor => NotFound,
            Error::WeakPassword { .. }
            | Error::ValidationFailed(_)
            | Error::UnknownProvider(_)
            | Error::TooLarge { .. }
            | Error::EmptyUpload
            | Error::TicketInvalid
            | Error::NoLocalImage
            | Error::SignatureInvalid
            | Error::DescriptorExpired => Validation,
            Error::DuplicateIdentity
            | Error::DuplicateGroupName
            | Error::AlreadyMember
            | Error::NotMember
            | Error::OwnerCannotLeave
            | Error::DuplicateLink
            | Error::ImageInUse
            | Error::HasDependents
            | Error::InUse
            | Error::AlreadyTerminal
            | Error::DuplicateReport
            | Error::QuotaExceeded(_)
            | Error::ProviderRejected { .. }
            | Error::Conflict
            | Error::ConflictRetryExhausted => Conflict,
            Error::ProviderUnreachable(_) | Error::InstanceUnknownAtProvider => Upstream,
            Error::SealBroken
            | Error::MigrationFailed { .. }
            | Error::NestedTransaction
            | Error::Storage(_)
            | Error::Io(_) => Internal,
        }
    }
}

impl From<rusqlite::Error> for Error {
    fn from(err: rusqlite::Error) -> Self {
        match err.sqlite_error_code() {
            Some(rusqlite::ErrorCode::DatabaseBusy) | Some(rusqlite::ErrorCode::DatabaseLocked) => {
                Error::Conflict
            }
            _ => Error::Storage(err.to_string()),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Storage(format!("record encoding: {err}"))
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
