use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid id {id} (vocabulary size {size})")]
    InvalidId { id: u32, size: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid canvas: {0}")]
    InvalidCanvas(String),

    #[error("placeholder count {count} exceeds k_max {k_max} at gap {gap}")]
    PlaceholderOverflow { gap: usize, count: usize, k_max: usize },

    #[error("not a subsequence of the target")]
    NotASubsequence,

    #[error("no neighbor")]
    NoNeighbor,

    #[error("sequence length {len} exceeds max_positions {max}")]
    Overlength { len: usize, max: usize },

    #[error("position {0} does not hold a placeholder")]
    NotPlaceholder(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing vector for pair id {0}")]
    MissingVector(u64),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    #[error("{0}")]
    Format(String),

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
