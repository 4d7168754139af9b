//! VLAD aggregation of local descriptors and PCA reduction.
//!
//! Each descriptor is assigned to its nearest codeword; residuals to that
//! codeword are summed per codeword, every per-codeword block is
//! L2-normalized (intra-normalization), and the concatenation is
//! L2-normalized again.

mod kmeans;
mod pca;

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kmeans::{train_codebook, train_codebook_traced, CodebookTraining, MAX_ITERATIONS, RELATIVE_TOLERANCE};
pub use pca::{pca_fit, pca_project, PcaModel};

use crate::descriptors::LocalDescriptorSet;
use crate::matrix::{read_emb, squared_euclidean, write_emb, Matrix, MatrixError};

pub const DEFAULT_CODEBOOK_SIZE: usize = 64;
pub const DEFAULT_PCA_DIM: usize = 1024;
pub const MAX_CODEBOOK_SAMPLES: usize = 200_000;

#[derive(Debug, Error)]
pub enum VladError {
    #[error("fewer samples ({samples}) than codewords ({k})")]
    TooFewSamples { samples: usize, k: usize },
    #[error("fewer distinct samples than codewords ({k})")]
    TooFewDistinct { k: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("target dimension {d_out} exceeds min(N-1, D) = {max}")]
    TargetTooLarge { d_out: usize, max: usize },
    #[error("rank deficient below d_out = {d_out} (numerical rank {rank})")]
    RankDeficient { d_out: usize, rank: usize },
    #[error("duplicate codewords {0} and {1}")]
    DuplicateCenters(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model header: {0}")]
    Header(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// `K x p` codewords.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centers: Matrix,
}

impl Codebook {
    pub fn new(centers: Matrix) -> Result<Self, VladError> {
        if centers.rows() == 0 {
            return Err(VladError::InvalidArgument("codebook needs at least one center".into()));
        }
        if let Some((row, col)) = centers.first_non_finite() {
            return Err(VladError::NonFinite { row, col });
        }
        for a in 0..centers.rows() {
            for b in a + 1..centers.rows() {
                if centers.row(a) == centers.row(b) {
                    return Err(VladError::DuplicateCenters(a, b));
                }
            }
        }
        Ok(Self { centers })
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn k(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VladVector {
    pub frame_id: String,
    pub values: Vec<f64>,
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn vlad_encode(frame: &LocalDescriptorSet, codebook: &Codebook) -> Result<VladVector, VladError> {
    let (k, p) = (codebook.k(), codebook.dim());
    let mut values = vec![0.0; k * p];
    let descriptors = &frame.descriptors;
    if descriptors.rows() > 0 {
        if descriptors.cols() != p {
            return Err(VladError::DimensionMismatch {
                expected: p,
                found: descriptors.cols(),
            });
        }
        for x in descriptors.iter_rows() {
            let (c, _) = kmeans::nearest(x, codebook.centers());
            let block = &mut values[c * p..(c + 1) * p];
            for ((acc, xv), cv) in block.iter_mut().zip(x).zip(codebook.centers().row(c)) {
                *acc += xv - cv;
            }
        }
        for block in values.chunks_exact_mut(p.max(1)) {
            normalize(block);
        }
        normalize(&mut values);
    }
    Ok(VladVector {
        frame_id: frame.frame_id.clone(),
        values,
    })
}

/// Pools at most `max_samples` descriptors across frames, chosen uniformly
/// by a seeded generator, in original order.
pub fn pool_descriptors(sets: &[LocalDescriptorSet], max_samples: usize, seed: u64) -> Matrix {
    let p = sets.iter().find(|s| s.descriptors.rows() > 0).map_or(0, |s| s.descriptors.cols());
    let total: usize = sets.iter().map(|s| s.descriptors.rows()).sum();
    let mut all = Vec::with_capacity(total * p);
    for s in sets {
        all.extend_from_slice(s.descriptors.as_slice());
    }
    let pooled = Matrix::from_vec(total, p, all).expect("consistent dimension");
    if total <= max_samples {
        return pooled;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, total, max_samples).into_vec();
    picked.sort_unstable();
    pooled.select_rows(&picked)
}

/// Encodes every frame in parallel; output follows input order.
pub fn vlad_encode_all(sets: &[LocalDescriptorSet], codebook: &Codebook) -> Result<Matrix, VladError> {
    let rows = sets
        .par_iter()
        .map(|s| vlad_encode(s, codebook).map(|v| v.values))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Matrix::from_vec(sets.len(), codebook.k() * codebook.dim(), rows.concat())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub k: usize,
    pub p: usize,
    pub d_out: usize,
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

fn write_header(path: &Path, header: &ModelHeader) -> Result<(), VladError> {
    let side = sidecar(path);
    let json = serde_json::to_string_pretty(header).expect("plain struct");
    fs::write(&side, json).map_err(|source| VladError::Io {
        path: side.display().to_string(),
        source,
    })
}

fn read_header(path: &Path) -> Result<ModelHeader, VladError> {
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|source| VladError::Io {
        path: side.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| VladError::Header(e.to_string()))
}

/// Saves the centers as `EMB1` plus a `<path>.json` header.
pub fn save_codebook(path: &Path, codebook: &Codebook) -> Result<(), VladError> {
    write_emb(path, codebook.centers())?;
    write_header(
        path,
        &ModelHeader {
            k: codebook.k(),
            p: codebook.dim(),
            d_out: 0,
        },
    )
}

pub fn load_codebook(path: &Path) -> Result<Codebook, VladError> {
    let header = read_header(path)?;
    let centers = read_emb(path)?;
    if (centers.rows(), centers.cols()) != (header.k, header.p) {
        return Err(VladError::Header(format!(
            "header says {}x{}, matrix is {}x{}",
            header.k,
            header.p,
            centers.rows(),
            centers.cols()
        )));
    }
    Codebook::new(centers)
}

/// Saves the PCA model as an `EMB1` matrix whose first row is the mean and
/// remaining rows are the components, plus a `<path>.json` header.
pub fn save_pca(path: &Path, model: &PcaModel, codebook_k: usize) -> Result<(), VladError> {
    let mut rows = vec![model.mean.clone()];
    rows.extend(model.components.iter_rows().map(<[f64]>::to_vec));
    write_emb(path, &Matrix::from_rows(&rows)?)?;
    let p = model.input_dim().checked_div(codebook_k).unwrap_or(0);
    write_header(
        path,
        &ModelHeader {
            k: codebook_k,
            p,
            d_out: model.output_dim(),
        },
    )
}

pub fn load_pca(path: &Path) -> Result<PcaModel, VladError> {
    let header = read_header(path)?;
    let m = read_emb(path)?;
    if m.rows() != header.d_out + 1 {
        return Err(VladError::Header(format!(
            "header says d_out {}, matrix has {} rows",
            header.d_out,
            m.rows()
        )));
    }
    let indices: Vec<usize> = (1..m.rows()).collect();
    Ok(PcaModel {
        mean: m.row(0).to_vec(),
        components: m.select_rows(&indices),
        explained_variance: Vec::new(),
    })
}

/// Sum of squared distances from each row to its nearest codeword.
pub fn inertia(points: &Matrix, codebook: &Codebook) -> f64 {
    points
        .iter_rows()
        .map(|x| {
            codebook
                .centers()
                .iter_rows()
                .map(|c| squared_euclidean(x, c))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}
