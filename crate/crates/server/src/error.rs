use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlatformError {
    #[error("authentication required")]
    Unauthenticated,
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {message}")]
    Conflict {
        message: String,
        latest_version: Option<u64>,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl PlatformError {
    pub fn kind(&self) -> &'static str {
        match self {
            PlatformError::Unauthenticated => "unauthenticated",
            PlatformError::Forbidden(_) => "forbidden",
            PlatformError::NotFound(_) => "not_found",
            PlatformError::Conflict { .. } => "conflict",
            PlatformError::Integrity(_) => "integrity",
            PlatformError::Precondition(_) => "precondition",
            PlatformError::Storage(_) => "storage",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            PlatformError::Unauthenticated => 401,
            PlatformError::Forbidden(_) => 403,
            PlatformError::NotFound(_) => 404,
            PlatformError::Conflict { .. } => 409,
            PlatformError::Integrity(_) | PlatformError::Precondition(_) => 422,
            PlatformError::Storage(_) => 500,
        }
    }

    pub(crate) fn conflict(message: impl Into<String>) -> Self {
        PlatformError::Conflict {
            message: message.into(),
            latest_version: None,
        }
    }

    pub(crate) fn stale(latest: u64) -> Self {
        PlatformError::Conflict {
            message: format!("base version is stale; latest is {latest}"),
            latest_version: Some(latest),
        }
    }
}

pub type Result<T, E = PlatformError> = std::result::Result<T, E>;
