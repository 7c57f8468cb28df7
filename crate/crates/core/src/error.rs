use thiserror::Error;

use crate::chem::SmilesError;
use crate::fingerprint::FingerprintError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} filter is not implemented")]
    UnsupportedFilter(&'static str),
    #[error("graph {0} has no nodes")]
    EmptyGraph(usize),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("numeric abort: {0}")]
    NumericAbort(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
