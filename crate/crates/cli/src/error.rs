use thiserror::Error;

/// Command failures, each mapped to its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("io error: {0}")]
    Io(String),

    /// A self-check category exceeded its threshold.
    #[error("self-check failed: {0}")]
    Check(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    /// 2 is left to argument parsing errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Numeric(_) => 5,
            CliError::Structural(_) => 6,
            CliError::Io(_) => 7,
            CliError::Check(_) => 8,
        }
    }
}

impl From<npcgp::Error> for CliError {
    fn from(e: npcgp::Error) -> Self {
        use npcgp::Error as E;
        match e {
            E::Config(m) | E::Parameter(m) => CliError::Config(m),
            E::Data(m) => CliError::Data(m),
            e @ E::Parse { .. } => CliError::Data(e.to_string()),
            E::Numeric(m) => CliError::Numeric(m),
            E::Structural(m) => CliError::Structural(m),
            E::Io(e) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
