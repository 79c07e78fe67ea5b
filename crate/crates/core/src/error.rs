use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CkmError>;

#[derive(Debug, Error)]
pub enum CkmError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),

    #[error("coordinate ({row}, {col}) is outside the {width}x{width} grid (valid rows and columns are 0..={max})", max = width.saturating_sub(1))]
    OutOfBounds { row: usize, col: usize, width: usize },

    #[error("grid specs differ: {0}")]
    SpecMismatch(String),

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("mse must be non-negative, got {0}")]
    NegativeMse(f64),

    #[error("AP at ({row}, {col}) lies inside an obstacle")]
    ApInObstacle { row: usize, col: usize },

    #[error("environment generation failed: {0}")]
    Generation(String),

    #[error("need {needed} free cells, only {available} available")]
    InsufficientFreeCells { needed: usize, available: usize },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("input assembly: {0}")]
    Assembly(String),

    #[error("{existing} existing APs do not fit the model's {slots} feature channels")]
    TooManyAps { existing: usize, slots: usize },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("dataset file missing: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("external dataset not found at {}", .0.display())]
    ExternalDatasetNotFound(PathBuf),

    #[error("image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("non-finite training loss at epoch {epoch}, samples [{}]", samples.join(", "))]
    NonFiniteLoss { epoch: usize, samples: Vec<String> },

    #[error("training: {0}")]
    Training(String),

    #[error(transparent)]
    Nn(#[from] ckm_nn::NnError),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CkmError {
    let path = path.into();
    move |source| CkmError::Io { path, source }
}
