use discom_agent::{AgentError, ApiError};
use discom_server::PlatformError;
use thiserror::Error;

/// Failure of a CLI command. The variant decides the exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input or a request the server refused (4xx). Exit 1.
    #[error("{0}")]
    User(String),
    /// Could not talk to the server or agent, or it failed (5xx). Exit 2.
    #[error("{0}")]
    Transport(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Transport(_) => 2,
        }
    }
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        match e {
            ApiError::Unreachable(m) => CliError::Transport(format!("server unreachable: {m}")),
            ApiError::Rejected(PlatformError::Storage(m)) => CliError::Transport(format!("server error: {m}")),
            ApiError::Rejected(p) => CliError::User(p.to_string()),
        }
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Api(api) => api.into(),
            other => CliError::User(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
