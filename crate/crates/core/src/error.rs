use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("repository `{0}` has no instances")]
    EmptyRepository(String),

    #[error("unknown record id `{0}`")]
    UnknownId(String),

    #[error("invalid ontology: {0}")]
    InvalidOntology(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label group `{0}` has no examples")]
    EmptyLabelGroup(String),

    #[error("need at least {needed} distinct classes, found {found}")]
    TooFewClasses { needed: usize, found: usize },

    #[error("cluster {0} has zero total membership mass")]
    ZeroMass(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("cold start for user `{0}`: no usable ratings")]
    ColdStart(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
