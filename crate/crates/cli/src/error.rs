use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    Missing(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] effchan::Error),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 config error, 2 missing or unreadable artifacts, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use effchan::Error as E;
        match self {
            CliError::Config(_) => 1,
            CliError::Missing(_) | CliError::Io { .. } | CliError::Json(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Core(e) => match e {
                E::InvalidParameter(_) | E::DimensionMismatch { .. } | E::Unsupported(_) => 1,
                E::Format { .. } | E::Io(_) | E::Json(_) => 2,
                E::NonPositiveCurvature { .. }
                | E::Singular { .. }
                | E::DegenerateDirection { .. }
                | E::ZeroVariance
                | E::InsufficientSamples { .. }
                | E::MissingClass(_) => 3,
            },
        }
    }
}
