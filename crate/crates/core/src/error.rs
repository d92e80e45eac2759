use std::path::PathBuf;

/// Errors raised anywhere in the engine.
///
/// Variants are grouped by who is at fault: the caller (`Usage`, `Config`),
/// the data (`Dimension`, `IdMismatch`, `Parse`, ...), or the run itself
/// (`Training`, `Io`). [`Error::exit_code`] maps the groups onto CLI exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("brute-force budget exceeded: {what} = {size} > budget {budget}")]
    Budget {
        what: String,
        size: u128,
        budget: u128,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("posterior undefined: {0}")]
    UndefinedPosterior(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("could not build {wanted} distinct pairs after {attempts} attempts")]
    SamplingExhausted { wanted: usize, attempts: usize },

    #[error("training diverged at step {step}: loss = {loss}")]
    Training { step: usize, loss: f64 },

    #[error("scoring failed for query {query}: {source}")]
    Scorer {
        query: String,
        #[source]
        source: Box<Error>,
    },

    #[error("decoding failed at position {position}: {source}")]
    Decode {
        position: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Budget { .. } => 2,
            Error::Dimension(_)
            | Error::IdMismatch(_)
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::UndefinedPosterior(_)
            | Error::UndefinedCorrelation(_) => 3,
            Error::Scorer { source, .. } | Error::Decode { source, .. } => source.exit_code(),
            Error::SamplingExhausted { .. }
            | Error::Training { .. }
            | Error::Io { .. }
            | Error::Serde(_) => 4,
        }
    }
}
