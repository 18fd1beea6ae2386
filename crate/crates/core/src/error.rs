use thiserror::Error;

use crate::session::SessionState;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("unknown or missing bearer token")]
    Unauthorized,
    #[error("denied: {0}")]
    Forbidden(String),
    #[error("quota exceeded: {owner} already has {active} active session(s)")]
    QuotaExceeded { owner: String, active: usize },
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: SessionState, to: SessionState },
    #[error("session `{id}` is {state}, not RUNNING")]
    SessionNotRunning { id: String, state: SessionState },
    #[error("timestamp {got} on stream {stream} is older than the stored {last}")]
    NonMonotonicTimestamp { stream: String, last: f64, got: f64 },
    #[error("dataset `{0}` is not sealed")]
    Unsealed(String),
    #[error("no executor slot available ({0} sessions running)")]
    ExecutorUnavailable(usize),
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("model {0} is already registered")]
    DuplicateModel(String),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("model {0} is external and cannot be invoked in-process")]
    NotInvocable(String),
    #[error("corrupt storage: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CoreError {
    pub fn invalid(field: impl Into<String>, message: impl ToString) -> Self {
        CoreError::Validation { field: field.into(), message: message.to_string() }
    }

    /// Stable machine-readable code for response bodies.
    pub fn code(&self) -> &'static str {
        match self {
            CoreError::Unauthorized => "unauthorized",
            CoreError::Forbidden(_) => "forbidden",
            CoreError::QuotaExceeded { .. } => "quota_exceeded",
            CoreError::UnknownSession(_) => "unknown_session",
            CoreError::UnknownScenario(_) => "unknown_scenario",
            CoreError::UnknownDataset(_) => "unknown_dataset",
            CoreError::IllegalTransition { .. } => "illegal_transition",
            CoreError::SessionNotRunning { .. } => "session_not_running",
            CoreError::NonMonotonicTimestamp { .. } => "non_monotonic_timestamp",
            CoreError::Unsealed(_) => "unsealed",
            CoreError::ExecutorUnavailable(_) => "executor_unavailable",
            CoreError::Validation { .. } => "validation",
            CoreError::DuplicateModel(_) => "duplicate_model",
            CoreError::UnknownModel(_) => "unknown_model",
            CoreError::SchemaMismatch(_) => "schema_mismatch",
            CoreError::NotInvocable(_) => "not_invocable",
            CoreError::Corrupt(_) => "corrupt",
            CoreError::Io(_) => "io",
        }
    }
}
