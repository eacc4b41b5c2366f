use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceOverflow { len: usize, max: usize },

    #[error("head grid shape mismatch: expected {expected_layers}x{expected_heads}, found {layers}x{heads}")]
    ShapeMismatch {
        expected_layers: usize,
        expected_heads: usize,
        layers: usize,
        heads: usize,
    },

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("incremental state does not match the request: {0}")]
    StateMismatch(String),

    #[error("image span {start}..{end} is outside the attended prefix of length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("threshold tau must lie strictly inside (0, 1), got {0}")]
    InvalidTau(f64),

    #[error("invalid decode parameters: {0}")]
    InvalidParams(String),

    #[error("logit vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("non-finite logit at index {0}")]
    NonFinite(usize),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("grounding head ({layer}, {head}) outside a {layers}x{heads} model")]
    HeadOutOfRange {
        layer: usize,
        head: usize,
        layers: usize,
        heads: usize,
    },

    #[error("scene {0} not found")]
    MissingScene(usize),

    #[error("question {0} has no predicted answer")]
    Unanswered(usize),

    #[error("parse error in {what} at line {line}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        msg: String,
    },

    #[error("model config hash mismatch: file has {found}, model is {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(what: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            msg: msg.into(),
        }
    }
}
