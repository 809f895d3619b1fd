use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed line ({reason})")]
    MalformedLine { line: usize, reason: String },
    #[error("corpus contains no sentences or instances")]
    EmptyCorpus,
    #[error("duplicate label `{0}` in label set")]
    DuplicateLabel(String),
    #[error("label `{0}` is not in the active label set")]
    UnknownLabel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("label `{label}` has {have} usable instances, need {need}")]
    InsufficientInstances { label: String, have: usize, need: usize },
    #[error("only {have} labels have enough instances, need {need}")]
    InsufficientLabels { have: usize, need: usize },
    #[error("label `{label}` has {have} support instances, expected {need}")]
    CountMismatch { label: String, have: usize, need: usize },

    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("mention and template need {need} tokens but max_seq_len is {max}")]
    MentionTooLong { need: usize, max: usize },
    #[error("verbalizer has no entry for label `{0}`")]
    MissingVerbalizerEntry(String),
    #[error("verbalizer word `{word}` for label `{label}` is not a single vocabulary item")]
    UnknownWord { label: String, word: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("loss or gradient became non-finite")]
    NonFiniteLoss,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("task stream is empty")]
    TaskStreamExhausted,

    #[error("line {line}: bad pattern ({reason})")]
    BadPattern { line: usize, reason: String },
    #[error("line {line}: priority {priority} is already used by another rule")]
    DuplicatePriority { line: usize, priority: i64 },

    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("prediction/gold alignment mismatch: {0}")]
    AlignmentMismatch(String),
    #[error("unsupported report format `{0}`")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
