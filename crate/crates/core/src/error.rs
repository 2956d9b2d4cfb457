use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid label: {0}")]
    Label(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Tensor(#[from] psfr_autograd::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CoreError::Shape(_) => "shape",
            CoreError::InvalidParam(_) => "invalid_param",
            CoreError::Label(_) => "label",
            CoreError::Config(_) => "config",
            CoreError::Checkpoint(_) => "checkpoint",
            CoreError::Dataset(_) => "dataset",
            CoreError::Io { .. } => "io",
            CoreError::Image { .. } | CoreError::Codec(_) => "image",
            CoreError::Tensor(_) => "tensor",
            CoreError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
