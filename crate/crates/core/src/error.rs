use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] forgeloc_tensor::TensorError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ground-truth mask has a single class")]
    DegenerateMask,
    #[error("forgery generation failed: {0}")]
    Generation(String),
    #[error("codec failure: {0}")]
    Codec(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("non-finite loss at step {step} (batch {batch_ids:?}): {components}")]
    Divergence {
        step: u64,
        batch_ids: Vec<String>,
        components: String,
    },
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
