//! Files, pipelines and the `nlx` command line on top of `nlx-core`.

pub mod cli;
pub mod formats;
pub mod manifest;
pub mod pipeline;

use std::path::PathBuf;

use nlx_core::data::DataError;
use nlx_core::decoding::DecodingError;
use nlx_core::evalframeworks::EvalFrameworkError;
use nlx_core::metrics::MetricsError;
use nlx_core::model::ModelError;
use nlx_core::numerics::NumericsError;
use nlx_core::tokenizer::TokenizerError;
use nlx_core::training::TrainingError;
use nlx_core::vision::VisionError;

pub use nlx_core as core;

#[derive(Debug, thiserror::Error)]
pub enum NlxError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Decoding(#[from] DecodingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    EvalFramework(#[from] EvalFrameworkError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T, E = NlxError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> NlxError {
    let path = path.into();
    move |source| NlxError::Io { path, source }
}
