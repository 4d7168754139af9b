//! Per-frame feature vectors: native HOG, plus ingestion of externally
//! computed local descriptor sets and global embeddings.

mod hog;
mod ingest;

use thiserror::Error;

pub use hog::{compute_hog, HogParams};
pub use ingest::{
    encode_local_descriptors, ingest_global_embeddings, ingest_local_descriptors,
    read_local_descriptor_file, write_local_descriptor_file, LDS_MAGIC,
};

use crate::matrix::{Matrix, MatrixError};

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("invalid HOG parameters: {0}")]
    InvalidParams(String),
    #[error("image {width}x{height} is not divisible by cell size {cell_size}")]
    NotDivisible {
        width: usize,
        height: usize,
        cell_size: usize,
    },
    #[error("image {width}x{height} is smaller than one block ({min_side} px)")]
    TooSmall {
        width: usize,
        height: usize,
        min_side: usize,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed local descriptor file: {0}")]
    Malformed(String),
    #[error("unknown frame id `{0}`")]
    UnknownFrame(String),
    #[error("inconsistent descriptor dimension: {found} for frame `{frame_id}`, expected {expected}")]
    InconsistentDim {
        frame_id: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite descriptor in frame `{0}`")]
    NonFinite(String),
    #[error("row out of range: frame `{frame_id}` references row {row} of a {rows}-row file")]
    RowOutOfRange {
        frame_id: String,
        row: u64,
        rows: usize,
    },
    #[error("frame `{0}` has no embedding row")]
    MissingRow(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// One frame's global feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    pub frame_id: String,
    pub values: Vec<f64>,
}

/// One frame's local descriptors, `M x p` (`M` may be zero).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDescriptorSet {
    pub frame_id: String,
    pub descriptors: Matrix,
}

/// `N x d` per-frame features with row-aligned frame ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frame_ids: Vec<String>,
    pub values: Matrix,
}

impl FeatureMatrix {
    pub fn from_descriptors(descriptors: Vec<GlobalDescriptor>) -> Result<Self, DescriptorError> {
        let frame_ids = descriptors.iter().map(|d| d.frame_id.clone()).collect();
        let rows: Vec<Vec<f64>> = descriptors.into_iter().map(|d| d.values).collect();
        Ok(Self {
            frame_ids,
            values: Matrix::from_rows(&rows)?,
        })
    }
}
