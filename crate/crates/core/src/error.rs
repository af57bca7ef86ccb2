use std::path::PathBuf;

/// Errors produced by the segmentation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("spatial constraint violated: {0}")]
    ConstraintViolation(String),

    #[error("correlation peak undefined: {0}")]
    UndefinedPeak(String),

    #[error(
        "histogram redistribution cannot terminate: clip limit {clip} over {bins} bins \
         cannot hold {total} samples"
    )]
    RedistributionGuard { clip: f64, bins: usize, total: u64 },

    #[error("phantom spec: {0}")]
    PhantomSpec(String),

    #[error("config: {0}")]
    Config(String),

    #[error("stage {stage} failed on {subject}: {source}")]
    Stage {
        stage: &'static str,
        subject: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an error with the pipeline stage and subject (slice, seed, ...)
    /// where it occurred.
    pub fn in_stage(self, stage: &'static str, subject: impl Into<String>) -> Error {
        Error::Stage {
            stage,
            subject: subject.into(),
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
