use thiserror::Error;

/// Errors produced by the groove library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed SMF header: {0}")]
    MalformedHeader(String),
    #[error("unsupported SMF format {0} (only formats 0 and 1 are accepted)")]
    UnsupportedFormat(u16),
    #[error("unsupported SMPTE time division {0:#06x}")]
    UnsupportedTimeDivision(u16),
    #[error("truncated chunk: {0}")]
    TruncatedChunk(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("training set is empty or smaller than the requested neighbor count")]
    EmptyTrainingSet,
    #[error("loss became non-finite at step {step} (last finite loss {last_finite})")]
    NonFiniteLoss { step: usize, last_finite: f64 },
    #[error("model has not been trained")]
    UntrainedModel,
    #[error("model was trained for task `{trained}` but `{requested}` was requested")]
    TaskMismatch { trained: String, requested: String },
    #[error("no hits to score")]
    EmptyIntersection,
    #[error("degenerate standard deviation {0} (collapsed group)")]
    DegenerateStd(f64),
    #[error("position group {group} has {count} notes; at least 2 are required")]
    InsufficientGroup { group: usize, count: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("corpus format: {0}")]
    CorpusFormat(String),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
