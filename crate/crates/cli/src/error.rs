use disco_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] CoreError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// 2 for bad configuration, 3 for unreadable or malformed data, 4 for
    /// numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                CoreError::InvalidArgument(_) | CoreError::EmptyTrainingSet => 2,
                CoreError::Io(_)
                | CoreError::Parse(_)
                | CoreError::BadMagic(_)
                | CoreError::Truncated { .. }
                | CoreError::DimensionMismatch { .. } => 3,
                CoreError::NonFinite(_) | CoreError::Numerical(_) | CoreError::Degenerate(_) => 4,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::from(e))
    }
}
