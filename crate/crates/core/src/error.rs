use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss function is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("sequence too long: {len} > max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error(
        "composed input does not fit: 1 (cls) + {prompt} (prompts) + {text} (text) = {total} > max_seq_len {max}"
    )]
    ComposeOverflow {
        prompt: usize,
        text: usize,
        total: usize,
        max: usize,
    },

    #[error("invalid model config: {0}")]
    ModelConfig(String),

    #[error("prompt error: {0}")]
    Prompt(String),

    #[error("base must be frozen")]
    BaseNotFrozen,

    #[error("no active prompt")]
    NoActivePrompt,

    #[error("unknown task id {0}")]
    UnknownTask(usize),

    #[error("{0}")]
    Metric(String),

    #[error("invalid task spec: {0}")]
    TaskSpec(String),

    #[error("insufficient examples: {0}")]
    Insufficient(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid token {0:?}")]
    Token(String),

    #[error("layer {layer} out of range for {layers} layers")]
    LayerOutOfRange { layer: usize, layers: usize },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown {kind} {name:?}; valid values: {valid}")]
    UnknownName {
        kind: &'static str,
        name: String,
        valid: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
