use std::path::PathBuf;

/// Pipeline failure, tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("[{stage}] config error: {message}")]
    Config { stage: &'static str, message: String },
    #[error("[{stage}] data error: {message}")]
    Data { stage: &'static str, message: String },
    #[error("[{stage}] invariant violated: {message}")]
    Internal { stage: &'static str, message: String },
    #[error("[{stage}] {path}: {source}")]
    Io {
        stage: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AuditError {
    pub fn config(stage: &'static str, message: impl ToString) -> Self {
        Self::Config { stage, message: message.to_string() }
    }

    pub fn data(stage: &'static str, message: impl ToString) -> Self {
        Self::Data { stage, message: message.to_string() }
    }

    pub fn internal(stage: &'static str, message: impl ToString) -> Self {
        Self::Internal { stage, message: message.to_string() }
    }

    pub fn io(stage: &'static str, path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { stage, path: path.into(), source }
    }

    /// 2 config, 3 data (including unreadable files), 4 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            AuditError::Config { .. } => 2,
            AuditError::Data { .. } | AuditError::Io { .. } => 3,
            AuditError::Internal { .. } => 4,
        }
    }
}

pub type Result<T, E = AuditError> = std::result::Result<T, E>;
