use std::io;

/// Every failure the pipeline can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("transform error: {0}")]
    Transform(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable process exit code per error family.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Config(_) | Error::Parameter(_) => 3,
            Error::Format(_) | Error::Csv(_) => 4,
            Error::Checksum { .. } => 5,
            Error::Contract(_) => 6,
            Error::Numeric(_) => 7,
            Error::Dimension(_) | Error::Geometry(_) | Error::Transform(_) => 8,
            Error::Evaluation(_) | Error::Data(_) => 9,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
