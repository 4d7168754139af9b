//! Exact brute-force nearest-neighbor search.

use rayon::prelude::*;

use crate::matrix::{euclidean, Matrix};

/// The `k` nearest neighbors of one point, self excluded, ascending by
/// distance with ties broken by lower index.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Exact `k`-nearest-neighbor lists for every row of `x`. `k` is clamped to
/// `rows - 1`. Rows are processed in parallel; output order is row order.
pub fn knn_table(x: &Matrix, k: usize) -> Vec<Neighbors> {
    let n = x.rows();
    let k = k.min(n.saturating_sub(1));
    (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (euclidean(xi, x.row(j)), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k, cmp);
                cand.truncate(k);
            }
            cand.sort_unstable_by(cmp);
            Neighbors {
                indices: cand.iter().map(|c| c.1).collect(),
                distances: cand.iter().map(|c| c.0).collect(),
            }
        })
        .collect()
}
