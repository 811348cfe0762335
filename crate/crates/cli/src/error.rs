use disparity_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 config, 3 data (including I/O), 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::AdjacencyRow { .. }
            | CoreError::SelfEdge { .. }
            | CoreError::Disconnected { .. }
            | CoreError::EmptyGraph
            | CoreError::Dimension(_)
            | CoreError::RankDeficient
            | CoreError::ZeroVariance(_)
            | CoreError::Io { .. } => CliError::Data(msg),
            CoreError::Parameter(_) => CliError::Config(msg),
            _ => CliError::Numeric(msg),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
