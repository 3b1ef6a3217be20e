use thiserror::Error;

/// Errors produced by the calibration engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A record in a line-delimited input could not be decoded or validated.
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed record: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("scoring tree: {0}")]
    ScoringTree(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("profile does not match trace: {0}")]
    ProfileMismatch(String),

    #[error("orbit: {0}")]
    Orbit(String),

    #[error("episode: {0}")]
    Episode(String),

    #[error("generator config: {0}")]
    Config(String),

    #[error("mining: {0}")]
    Mining(String),

    #[error("embedding file: {0}")]
    Embedding(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_line(line: usize, err: Error) -> Self {
        Error::Record {
            line,
            source: Box::new(err),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
