use std::path::PathBuf;

use thiserror::Error;

use crate::doc_model::DocError;
use crate::encoder::EncoderError;
use crate::engine::EngineError;
use crate::hpe::HpeError;
use crate::listops::ListOpsError;
use crate::mask::MaskError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Doc(#[from] DocError),
    #[error(transparent)]
    Hpe(#[from] HpeError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    ListOps(#[from] ListOpsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures of the arithmetic itself (non-finite values, divergence)
    /// as opposed to bad input data.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Engine(e) => e.is_numeric(),
            Error::Encoder(e) => e.is_numeric(),
            _ => false,
        }
    }
}
