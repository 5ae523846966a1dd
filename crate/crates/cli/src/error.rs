use std::path::PathBuf;

use mpcc_core::{CodecError, KeyError, TransformError};
use mpcc_sparse::{RecoveryError, SensingError};
use mpcc_store::StoreError;
use thiserror::Error;

use crate::config::ConfigError;
use crate::image::ImageError;
use crate::meter::MeterError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Meter(#[from] MeterError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("no basis: give a basis file, a training image, or choose the DCT")]
    BasisMissing,
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn file_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::File { path, source }
}
