use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // dsp
    #[error("clip too short: {len} samples, need at least {min}")]
    ClipTooShort { len: usize, min: usize },
    #[error("unsupported sample rate: {0} Hz (expected 22050)")]
    UnsupportedSampleRate(u32),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("no training data")]
    NoTrainingData,
    #[error("degenerate training data: pooled variance is zero")]
    DegenerateTrainingData,
    #[error("double standardization")]
    DoubleStandardization,
    #[error("invalid normalization stats: {0}")]
    InvalidStats(String),

    // nncore
    #[error("shape error: {0}")]
    Shape(String),
    #[error("batch too small: train-mode batch norm needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid pool width {0}")]
    InvalidPool(usize),
    #[error("bad label {label} for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("undefined cosine: zero vector")]
    UndefinedCosine,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    // model
    #[error("bad architecture: {0}")]
    BadArchitecture(String),
    #[error("no head: network was built without an output layer")]
    NoHead,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version mismatch: file has {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),

    // data
    #[error("catalog line {line}: {msg}")]
    Catalog { line: usize, msg: String },
    #[error("duplicate track_id {id:?} on line {line}")]
    DuplicateTrack { id: String, line: usize },
    #[error("insufficient artists: {available} eligible, {required} required")]
    InsufficientArtists { available: usize, required: usize },
    #[error("clip shorter than context: {len} samples, need {context}")]
    ClipShorterThanContext { len: usize, context: usize },
    #[error("track {track_id}: {source}")]
    Track {
        track_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid split spec: {0}")]
    InvalidSplit(String),

    // train
    #[error("divergence at epoch {epoch} step {step}: non-finite loss (last good checkpoint: {last_good:?})")]
    Divergence {
        epoch: usize,
        step: usize,
        last_good: Option<PathBuf>,
    },
    #[error("invalid config: {0}")]
    Config(String),

    // eval
    #[error("no relevant pairs: every query was skipped")]
    NoRelevantPairs,
    #[error("no reference data")]
    NoReferenceData,
    #[error("degenerate labels: need at least two classes")]
    DegenerateLabels,

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn for_track(self, track_id: &str) -> Self {
        Error::Track {
            track_id: track_id.to_string(),
            source: Box::new(self),
        }
    }
}
