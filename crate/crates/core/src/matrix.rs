//! Dense row-major matrices and the `EMB1` binary matrix format.
//!
//! `EMB1` layout: magic `EMB1`, `u32` row count, `u32` column count, then
//! `rows * cols` little-endian `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("magic mismatch: expected EMB1, found {0:?}")]
    Magic([u8; 4]),
    #[error("truncated matrix file: expected {expected} bytes of data, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("matrix has dimension 0")]
    ZeroDimension,
    #[error("value at row {row}, column {col} is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatrixError> {
        if data.len() != rows * cols {
            return Err(MatrixError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, MatrixError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(MatrixError::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        let cols = self.cols.max(1);
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / cols, p % cols))
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        if self.rows > 0 {
            let n = self.rows as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        mean
    }
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

/// Writes `matrix` in `EMB1` format. Values are narrowed to `f32`.
pub fn write_emb(path: &Path, matrix: &Matrix) -> Result<(), MatrixError> {
    let io = |source| MatrixError::Io {
        path: path.display().to_string(),
        source,
    };
    let rows = u32::try_from(matrix.rows())
        .map_err(|_| MatrixError::Shape("row count exceeds u32".into()))?;
    let cols = u32::try_from(matrix.cols())
        .map_err(|_| MatrixError::Shape("column count exceeds u32".into()))?;
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut header = Vec::with_capacity(12);
    header.extend_from_slice(EMB_MAGIC);
    header.extend_from_slice(&rows.to_le_bytes());
    header.extend_from_slice(&cols.to_le_bytes());
    w.write_all(&header).map_err(io)?;
    let mut buf = Vec::with_capacity(matrix.as_slice().len() * 4);
    for &v in matrix.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

/// Reads an `EMB1` file. Rejects zero dimensions and non-finite values.
pub fn read_emb(path: &Path) -> Result<Matrix, MatrixError> {
    let io = |source| MatrixError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io)?)
        .read_to_end(&mut bytes)
        .map_err(io)?;
    decode_emb(&bytes)
}

pub fn decode_emb(bytes: &[u8]) -> Result<Matrix, MatrixError> {
    if bytes.len() < 12 {
        return Err(MatrixError::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if &magic != EMB_MAGIC {
        return Err(MatrixError::Magic(magic));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if cols == 0 {
        return Err(MatrixError::ZeroDimension);
    }
    let expected = rows * cols * 4;
    let payload = &bytes[12..];
    if payload.len() != expected {
        return Err(MatrixError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    let m = Matrix { rows, cols, data };
    if let Some((row, col)) = m.first_non_finite() {
        return Err(MatrixError::NonFinite { row, col });
    }
    Ok(m)
}
