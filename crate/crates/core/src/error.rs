use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("EM failed to improve the likelihood for 10 consecutive iterations (stopped at iteration {iterations})")]
    NonConvergence { iterations: usize },

    #[error("insufficient support: need {needed} points, have {available}")]
    InsufficientSupport { needed: usize, available: usize },

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("image too small: {0}")]
    TooSmall(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("model was trained with {found}, rule requires {expected}")]
    WrongAlgorithm { expected: String, found: String },

    #[error("fold {fold} of repetition {repetition} failed: {source}")]
    Fold {
        repetition: usize,
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest row {row}: unknown class {class:?}")]
    UnknownClass { row: usize, class: String },

    #[error("manifest row {row}: duplicate volume id {id:?}")]
    DuplicateVolume { row: usize, id: String },

    #[error("manifest row {row}: directory {path} does not exist")]
    MissingDirectory { row: usize, path: PathBuf },

    #[error("manifest row {row}: {message}")]
    Manifest { row: usize, message: String },

    #[error("stage {stage} failed{}: {source}", location(.volume, .bscan))]
    Stage {
        stage: String,
        volume: Option<String>,
        bscan: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn location(volume: &Option<String>, bscan: &Option<usize>) -> String {
    match (volume, bscan) {
        (Some(v), Some(b)) => format!(" for volume {v} b-scan {b}"),
        (Some(v), None) => format!(" for volume {v}"),
        _ => String::new(),
    }
}

impl Error {
    /// Process exit code for the CLI: 2 for validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } | Error::DegenerateInput(_) => 3,
            Error::Fold { source, .. } | Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
