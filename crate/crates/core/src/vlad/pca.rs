//! Principal component analysis by symmetric eigen-decomposition.
//!
//! For `D <= N` the `D x D` covariance is decomposed directly. Otherwise the
//! `N x N` Gram matrix of the centered data is decomposed and its
//! eigenvectors are mapped back to feature space.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::VladError;
use crate::matrix::Matrix;

/// Fitted projection. `components` rows are orthonormal and ordered by
/// descending variance; each row's largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }
}

fn centered(x: &Matrix, mean: &[f64]) -> Matrix {
    let mut c = x.clone();
    for i in 0..c.rows() {
        for (v, m) in c.row_mut(i).iter_mut().zip(mean) {
            *v -= m;
        }
    }
    c
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric `rows x rows` matrix of row inner products, scaled.
fn gram(rows: &[&[f64]], scale: f64) -> DMatrix<f64> {
    let n = rows.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| dot(rows[i], rows[j]) * scale).collect())
        .collect();
    let mut g = DMatrix::zeros(n, n);
    for (i, r) in upper.iter().enumerate() {
        for (off, &v) in r.iter().enumerate() {
            g[(i, i + off)] = v;
            g[(i + off, i)] = v;
        }
    }
    g
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn pca_fit(vectors: &Matrix, d_out: usize) -> Result<PcaModel, VladError> {
    let (n, d) = (vectors.rows(), vectors.cols());
    if n < 2 {
        return Err(VladError::InvalidArgument("PCA needs at least 2 rows".into()));
    }
    if d_out == 0 || d_out > (n - 1).min(d) {
        return Err(VladError::TargetTooLarge {
            d_out,
            max: (n - 1).min(d),
        });
    }
    if let Some((row, col)) = vectors.first_non_finite() {
        return Err(VladError::NonFinite { row, col });
    }
    let mean = vectors.column_means();
    let xc = centered(vectors, &mean);
    let scale = 1.0 / (n - 1) as f64;

    let (values, mut comps) = if d <= n {
        // covariance = Xcᵀ Xc / (n-1), built from columns
        let cols: Vec<Vec<f64>> = (0..d).map(|j| (0..n).map(|i| xc.get(i, j)).collect()).collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let (values, vecs) = sorted_eigen(gram(&refs, scale));
        let comps: Vec<Vec<f64>> = (0..d_out)
            .map(|k| vecs.column(k).iter().copied().collect())
            .collect();
        (values, comps)
    } else {
        let refs: Vec<&[f64]> = xc.iter_rows().collect();
        let (values, vecs) = sorted_eigen(gram(&refs, scale));
        let comps: Vec<Vec<f64>> = (0..d_out)
            .map(|k| {
                let u = vecs.column(k);
                let mut v = vec![0.0; d];
                for (i, row) in xc.iter_rows().enumerate() {
                    let w = u[i];
                    for (acc, x) in v.iter_mut().zip(row) {
                        *acc += w * x;
                    }
                }
                v
            })
            .collect();
        (values, comps)
    };

    let top = values[0].max(0.0);
    let floor = top * 1e-12 * n.max(d) as f64;
    if !(top > 0.0) || values[d_out - 1] <= floor {
        let rank = values.iter().take_while(|&&v| v > floor).count();
        return Err(VladError::RankDeficient { d_out, rank });
    }

    // modified Gram-Schmidt keeps rows orthonormal through the dual mapping
    for k in 0..comps.len() {
        let (done, rest) = comps.split_at_mut(k);
        let v = &mut rest[0];
        for u in done.iter() {
            let p = dot(v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = dot(v, v).sqrt();
        if !(norm > 0.0) {
            return Err(VladError::RankDeficient { d_out, rank: k });
        }
        v.iter_mut().for_each(|a| *a /= norm);
        fix_sign(v);
    }

    Ok(PcaModel {
        mean,
        components: Matrix::from_rows(&comps).expect("equal rows"),
        explained_variance: values[..d_out].to_vec(),
    })
}

pub fn pca_project(model: &PcaModel, vectors: &Matrix) -> Result<Matrix, VladError> {
    if vectors.cols() != model.input_dim() {
        return Err(VladError::DimensionMismatch {
            expected: model.input_dim(),
            found: vectors.cols(),
        });
    }
    let out_dim = model.output_dim();
    let rows: Vec<Vec<f64>> = (0..vectors.rows())
        .into_par_iter()
        .map(|i| {
            let centered: Vec<f64> = vectors.row(i).iter().zip(&model.mean).map(|(x, m)| x - m).collect();
            (0..out_dim).map(|k| dot(&centered, model.components.row(k))).collect()
        })
        .collect();
    Ok(Matrix::from_vec(vectors.rows(), out_dim, rows.concat()).expect("shape"))
}
