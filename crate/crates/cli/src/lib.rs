//! Pipeline stages behind the `framesplit` binary.
//!
//! Each stage reads its inputs from files and writes its outputs to files,
//! so any stage can be rerun or replaced on its own.

pub mod commands;
pub mod config;
pub mod verify;

use framesplit::corpus::CorpusError;
use framesplit::descriptors::DescriptorError;
use framesplit::hdbscan::HdbscanError;
use framesplit::matrix::MatrixError;
use framesplit::metrics::MetricsError;
use framesplit::pacmap::PacmapError;
use framesplit::splitter::SplitError;
use framesplit::testkit::OracleError;
use framesplit::vlad::VladError;
use thiserror::Error;

pub use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Alignment(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Json { path: String, msg: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Vlad(#[from] VladError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Pacmap(#[from] PacmapError),
    #[error(transparent)]
    Hdbscan(#[from] HdbscanError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}
