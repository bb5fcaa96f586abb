use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped by [`ErrorKind`] so that callers (the CLI in
/// particular) can map them onto exit codes without matching every case.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: line {line}: {message}")]
    Row {
        file: String,
        line: usize,
        message: String,
    },

    #[error("{file}: {message}")]
    Format { file: String, message: String },

    #[error("unknown usage ids: {}", .0.join(", "))]
    UnknownUsages(Vec<String>),

    #[error("usages from more than one lemma: {}", .0.join(", "))]
    MixedLemmas(Vec<String>),

    #[error("duplicate usage id {0:?}")]
    DuplicateUsage(String),

    #[error("no valid judgments (all ratings missing)")]
    NoValidJudgments,

    #[error("corrupt embedding store at byte {offset}: {reason}")]
    CorruptStore { offset: u64, reason: String },

    #[error("duplicate embedding record for usage {0:?}")]
    DuplicateRecord(String),

    #[error("no embedding for usages: {}", .0.join(", "))]
    MissingEmbeddings(Vec<String>),

    #[error("no score for pairs: {}", .0.join(", "))]
    MissingScores(Vec<String>),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("usage {0:?} has no cluster assignment")]
    Unassigned(String),

    #[error("graph has {nodes} nodes; exhaustive search supports at most {max}")]
    TooLarge { nodes: usize, max: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("clusterings cover different usages (only in gold: [{}]; only in prediction: [{}])", .only_gold.join(", "), .only_pred.join(", "))]
    DomainMismatch {
        only_gold: Vec<String>,
        only_pred: Vec<String>,
    },

    #[error("missing predictions for: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification of [`Error`] values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    UndefinedMetric,
    Computation,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidSpec(_) => ErrorKind::Config,
            Error::UndefinedMetric(_) | Error::MissingPredictions(_) => ErrorKind::UndefinedMetric,
            Error::Degenerate(_) | Error::Unassigned(_) | Error::TooLarge { .. } | Error::Shape(_) => {
                ErrorKind::Computation
            }
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn row(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Row {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn format(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            message: message.into(),
        }
    }
}
