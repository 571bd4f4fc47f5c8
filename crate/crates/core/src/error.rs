use thiserror::Error;

pub type Result<T> = std::result::Result<T, ErcError>;

#[derive(Debug, Error)]
pub enum ErcError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dialogue {dialogue}, utterance {utterance}: {msg}")]
    Corpus {
        dialogue: String,
        utterance: usize,
        msg: String,
    },

    #[error("speaker id {speaker} out of range for {num_speakers} speakers")]
    SpeakerOutOfRange { speaker: usize, num_speakers: usize },

    #[error("relation id {relation} out of range for {relation_count} relation types")]
    RelationOutOfRange {
        relation: usize,
        relation_count: usize,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("non-finite loss on dialogue {dialogue} (epoch {epoch})")]
    NumericalAbort { dialogue: String, epoch: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ErcError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        ErcError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
