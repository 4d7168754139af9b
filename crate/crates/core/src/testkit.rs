//! Independent reference implementations for auditing the library: exact
//! expected mutual information by enumeration, direct-formula scores,
//! central finite differences, brute-force HDBSCAN on tiny inputs and a
//! random baseline for neighborhood preservation.
//!
//! Nothing here calls into the modules being checked; they only share the
//! plain data types.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hdbscan::{ClusterLabeling, HdbscanParams};
use crate::matrix::Matrix;
use crate::metrics::ContingencyTable;

pub const MAX_EMI_POINTS: usize = 10;
pub const MAX_TINY_POINTS: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("oracle limited to {max} points, got {got}")]
    TooLarge { max: usize, got: usize },
    #[error("invalid oracle input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub case_id: String,
    pub reference: f64,
    pub implementation: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleReport {
    /// Passes when the absolute error is within `tolerance`.
    pub fn absolute(case_id: impl Into<String>, reference: f64, implementation: f64, tolerance: f64) -> Self {
        let abs_error = (reference - implementation).abs();
        Self {
            case_id: case_id.into(),
            reference,
            implementation,
            abs_error,
            rel_error: relative_error(reference, implementation),
            tolerance,
            passed: abs_error <= tolerance,
        }
    }

    /// Passes when the relative error is within `tolerance`.
    pub fn relative(case_id: impl Into<String>, reference: f64, implementation: f64, tolerance: f64) -> Self {
        let mut r = Self::absolute(case_id, reference, implementation, tolerance);
        r.passed = r.rel_error <= tolerance;
        r
    }

    /// A check whose pass rule is not a plain tolerance, e.g. a bound or a
    /// count. Errors are still reported against `reference`.
    pub fn condition(case_id: impl Into<String>, reference: f64, implementation: f64, passed: bool) -> Self {
        let mut r = Self::absolute(case_id, reference, implementation, 0.0);
        r.passed = passed;
        r
    }
}

/// `|a - b| / max(|a|, |b|)`, 0 when both are 0.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.len() {
        let t = a[k] - b[k];
        acc += t * t;
    }
    acc.sqrt()
}

/// Expected mutual information by averaging over every permutation of the
/// predicted labels. Cell counts are tallied as integers; logs are taken
/// only in the final sum.
pub fn oracle_emi(table: &ContingencyTable) -> Result<f64, OracleError> {
    let n = table.total() as usize;
    if n > MAX_EMI_POINTS {
        return Err(OracleError::TooLarge {
            max: MAX_EMI_POINTS,
            got: n,
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let rows: Vec<usize> = table
        .row_sums()
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| std::iter::repeat_n(i, a as usize))
        .collect();
    let mut cols: Vec<usize> = table
        .col_sums()
        .iter()
        .enumerate()
        .flat_map(|(j, &b)| std::iter::repeat_n(j, b as usize))
        .collect();
    let (r, s) = (table.row_sums().len(), table.col_sums().len());
    // tally[i][j][k]: permutations in which cell (i, j) holds k items
    let mut tally = vec![vec![vec![0u64; n + 1]; s]; r];
    let mut cell = vec![vec![0usize; s]; r];
    let mut visit = |cols: &[usize]| {
        for row in cell.iter_mut() {
            row.fill(0);
        }
        for (&i, &j) in rows.iter().zip(cols) {
            cell[i][j] += 1;
        }
        for i in 0..r {
            for j in 0..s {
                tally[i][j][cell[i][j]] += 1;
            }
        }
    };
    // Heap's algorithm over positions
    let mut c = vec![0usize; n];
    visit(&cols);
    let mut i = 1;
    let mut perms: u64 = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                cols.swap(0, i);
            } else {
                cols.swap(c[i], i);
            }
            visit(&cols);
            perms += 1;
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for (i, &a) in table.row_sums().iter().enumerate() {
        for (j, &b) in table.col_sums().iter().enumerate() {
            for (k, &count) in tally[i][j].iter().enumerate().skip(1) {
                if count > 0 {
                    let kf = k as f64;
                    let weight = count as f64 / perms as f64;
                    emi += weight * kf / nf * (nf * kf / (a as f64 * b as f64)).ln();
                }
            }
        }
    }
    Ok(emi)
}

/// Per-label counts of two labelings, treating every label (noise included)
/// as an ordinary class.
fn joint_counts(t: &[i64], p: &[i64]) -> (BTreeMap<(i64, i64), usize>, BTreeMap<i64, usize>, BTreeMap<i64, usize>) {
    let (mut joint, mut ct, mut cp) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    for (&a, &b) in t.iter().zip(p) {
        *joint.entry((a, b)).or_insert(0) += 1;
        *ct.entry(a).or_insert(0) += 1;
        *cp.entry(b).or_insert(0) += 1;
    }
    (joint, ct, cp)
}

fn plain_entropy(counts: &BTreeMap<i64, usize>, n: f64) -> f64 {
    let mut h = 0.0;
    for &c in counts.values() {
        let p = c as f64 / n;
        h -= p * p.ln();
    }
    h
}

/// AMI with arithmetic normalization, from the direct definitions and the
/// enumerated expectation.
pub fn oracle_ami(true_labels: &[i64], pred_labels: &[i64]) -> Result<f64, OracleError> {
    if true_labels.len() != pred_labels.len() || true_labels.is_empty() {
        return Err(OracleError::Invalid("labelings must be non-empty and aligned".into()));
    }
    let n = true_labels.len() as f64;
    let (joint, ct, cp) = joint_counts(true_labels, pred_labels);
    let mut mi = 0.0;
    for (&(a, b), &c) in &joint {
        let c = c as f64;
        mi += c / n * (n * c / (ct[&a] as f64 * cp[&b] as f64)).ln();
    }
    let mi = mi.max(0.0);
    let idx_t: BTreeMap<i64, usize> = ct.keys().enumerate().map(|(k, &l)| (l, k)).collect();
    let idx_p: BTreeMap<i64, usize> = cp.keys().enumerate().map(|(k, &l)| (l, k)).collect();
    let mut counts = vec![vec![0u64; cp.len()]; ct.len()];
    for (&(a, b), &c) in &joint {
        counts[idx_t[&a]][idx_p[&b]] = c as u64;
    }
    let table = ContingencyTable::from_counts(counts).map_err(|e| OracleError::Invalid(e.to_string()))?;
    let emi = oracle_emi(&table)?;
    let norm = 0.5 * (plain_entropy(&ct, n) + plain_entropy(&cp, n));
    let denom = norm - emi;
    if (mi - emi).abs() <= 1e-12 * mi.max(1.0) {
        return Ok(if denom.abs() <= 1e-12 * norm.max(1.0) { 1.0 } else { 0.0 });
    }
    Ok((mi - emi) / denom)
}

/// Homogeneity, completeness and V-measure straight from the conditional
/// entropy definitions.
pub fn oracle_v_measure(true_labels: &[i64], pred_labels: &[i64]) -> (f64, f64, f64) {
    let n = true_labels.len() as f64;
    let (joint, ct, cp) = joint_counts(true_labels, pred_labels);
    let (h_c, h_k) = (plain_entropy(&ct, n), plain_entropy(&cp, n));
    let mut h_c_given_k = 0.0;
    let mut h_k_given_c = 0.0;
    for (&(a, b), &c) in &joint {
        let c = c as f64;
        h_c_given_k -= c / n * (c / cp[&b] as f64).ln();
        h_k_given_c -= c / n * (c / ct[&a] as f64).ln();
    }
    let h = if h_c == 0.0 { 1.0 } else { 1.0 - h_c_given_k / h_c };
    let c = if h_k == 0.0 { 1.0 } else { 1.0 - h_k_given_c / h_k };
    let v = if h + c == 0.0 { 0.0 } else { 2.0 * h * c / (h + c) };
    (h, c, v)
}

/// Central differences of `loss` at every coordinate of `y`.
pub fn oracle_finite_diff(loss: impl Fn(&Matrix) -> f64, y: &Matrix, step: f64) -> Matrix {
    let mut probe = y.clone();
    let mut grad = Matrix::zeros(y.rows(), y.cols());
    for k in 0..y.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let up = loss(&probe);
        probe.as_mut_slice()[k] = orig - step;
        let down = loss(&probe);
        probe.as_mut_slice()[k] = orig;
        grad.as_mut_slice()[k] = (up - down) / (2.0 * step);
    }
    grad
}

/// Result of the brute-force HDBSCAN: labels plus the minimum spanning tree
/// weight found by enumerating every spanning tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyHdbscan {
    pub labeling: ClusterLabeling,
    pub mst_weight: f64,
}

fn tiny_reachability(points: &Matrix, min_samples: usize) -> Vec<Vec<f64>> {
    let n = points.rows();
    let d: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dist(points.row(i), points.row(j))).collect())
        .collect();
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[i][j]).collect();
            others.sort_by(f64::total_cmp);
            others[min_samples - 1]
        })
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { d[i][j].max(core[i]).max(core[j]) })
                .collect()
        })
        .collect()
}

/// Smallest total weight over all `n^(n-2)` labeled spanning trees, decoded
/// from Prüfer sequences.
fn enumerate_mst_weight(w: &[Vec<f64>]) -> f64 {
    let n = w.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return w[0][1];
    }
    let len = n - 2;
    let mut seq = vec![0usize; len];
    let mut best = f64::INFINITY;
    loop {
        let mut degree = vec![1usize; n];
        for &v in &seq {
            degree[v] += 1;
        }
        let mut total = 0.0;
        for &v in &seq {
            let leaf = (0..n).find(|&u| degree[u] == 1).expect("a leaf exists");
            total += w[leaf][v];
            degree[leaf] -= 1;
            degree[v] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&u| degree[u] == 1).collect();
        total += w[rest[0]][rest[1]];
        best = best.min(total);
        // next sequence, odometer style
        let mut k = 0;
        while k < len && seq[k] == n - 1 {
            seq[k] = 0;
            k += 1;
        }
        if k == len {
            break;
        }
        seq[k] += 1;
    }
    best
}

/// Connected components of `members` in the graph with an edge wherever the
/// mutual reachability is strictly below `level`.
fn components_below(w: &[Vec<f64>], members: &[usize], level: f64) -> Vec<Vec<usize>> {
    let mut comp: Vec<Option<usize>> = vec![None; w.len()];
    let mut out: Vec<Vec<usize>> = Vec::new();
    for &start in members {
        if comp[start].is_some() {
            continue;
        }
        let id = out.len();
        let mut part = vec![start];
        comp[start] = Some(id);
        let mut k = 0;
        while k < part.len() {
            let u = part[k];
            for &v in members {
                if comp[v].is_none() && w[u][v] < level {
                    comp[v] = Some(id);
                    part.push(v);
                }
            }
            k += 1;
        }
        part.sort_unstable();
        out.push(part);
    }
    out
}

struct TinyCluster {
    members: Vec<usize>,
    birth: f64,
    stability: f64,
    children: Vec<usize>,
}

/// HDBSCAN from the definitions on at most 8 points: explicit
/// mutual-reachability matrix, hierarchy by thresholding it at every
/// distinct value, stabilities summed point by point, and excess-of-mass
/// selection by recursion.
pub fn oracle_tiny_hdbscan(points: &Matrix, params: &HdbscanParams) -> Result<ClusterLabeling, OracleError> {
    oracle_tiny_hdbscan_full(points, params).map(|r| r.labeling)
}

pub fn oracle_tiny_hdbscan_full(points: &Matrix, params: &HdbscanParams) -> Result<TinyHdbscan, OracleError> {
    let n = points.rows();
    if n > MAX_TINY_POINTS {
        return Err(OracleError::TooLarge {
            max: MAX_TINY_POINTS,
            got: n,
        });
    }
    let mcs = params.min_cluster_size;
    if mcs < 2 {
        return Err(OracleError::Invalid("min_cluster_size must be at least 2".into()));
    }
    if n < 2 {
        return Ok(TinyHdbscan {
            labeling: ClusterLabeling {
                labels: vec![-1; n],
                stabilities: Vec::new(),
            },
            mst_weight: 0.0,
        });
    }
    let min_samples = params.min_samples.unwrap_or(mcs).min(n - 1);
    let w = tiny_reachability(points, min_samples);
    let mst_weight = enumerate_mst_weight(&w);

    let mut levels = Vec::new();
    for i in 0..n {
        levels.extend_from_slice(&w[i][i + 1..]);
    }
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();

    let lambda_of = |d: f64| 1.0 / d.max(1e-12);
    let mut clusters = vec![TinyCluster {
        members: (0..n).collect(),
        birth: 0.0,
        stability: 0.0,
        children: Vec::new(),
    }];
    // active: (cluster index, points still inside it)
    let mut active: Vec<(usize, Vec<usize>)> = vec![(0, (0..n).collect())];
    for &level in &levels {
        let lambda = lambda_of(level);
        let mut next = Vec::new();
        for (c, inside) in active {
            let parts = components_below(&w, &inside, level);
            if parts.len() == 1 {
                next.push((c, inside));
                continue;
            }
            let birth = clusters[c].birth;
            let (big, small): (Vec<_>, Vec<_>) = parts.into_iter().partition(|p| p.len() >= mcs);
            for part in &small {
                clusters[c].stability += (lambda - birth) * part.len() as f64;
            }
            if big.len() == 1 {
                next.push((c, big.into_iter().next().expect("one part")));
            } else {
                for part in big {
                    clusters[c].stability += (lambda - birth) * part.len() as f64;
                    let id = clusters.len();
                    clusters.push(TinyCluster {
                        members: part.clone(),
                        birth: lambda,
                        stability: 0.0,
                        children: Vec::new(),
                    });
                    clusters[c].children.push(id);
                    next.push((id, part));
                }
            }
        }
        active = next;
    }
    // below the smallest level every point is isolated
    debug_assert!(active.is_empty());
    fn choose(clusters: &[TinyCluster], c: usize) -> (f64, Vec<usize>) {
        let mut below = 0.0;
        let mut picked = Vec::new();
        for &k in &clusters[c].children {
            let (v, p) = choose(clusters, k);
            below += v;
            picked.extend(p);
        }
        if c != 0 && clusters[c].stability > below {
            (clusters[c].stability, vec![c])
        } else {
            (below, picked)
        }
    }
    let (_, mut picked) = choose(&clusters, 0);
    picked.sort_by(|&a, &b| {
        let (ma, mb) = (&clusters[a].members, &clusters[b].members);
        mb.len().cmp(&ma.len()).then(ma[0].cmp(&mb[0]))
    });
    let mut labels = vec![-1i64; n];
    for (label, &c) in picked.iter().enumerate() {
        for &p in &clusters[c].members {
            labels[p] = label as i64;
        }
    }
    Ok(TinyHdbscan {
        labeling: ClusterLabeling {
            labels,
            stabilities: picked.iter().map(|&c| clusters[c].stability).collect(),
        },
        mst_weight,
    })
}

/// Equal labels and stabilities within relative tolerance `tol`.
pub fn labelings_agree(a: &ClusterLabeling, b: &ClusterLabeling, tol: f64) -> bool {
    a.labels == b.labels
        && a.stabilities.len() == b.stabilities.len()
        && a.stabilities
            .iter()
            .zip(&b.stabilities)
            .all(|(x, y)| relative_error(*x, *y) <= tol)
}

fn brute_knn(x: &Matrix, i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..x.rows())
        .filter(|&j| j != i)
        .map(|j| (dist(x.row(i), x.row(j)), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|p| p.1).collect()
}

/// Mean kNN preservation of `x` against row-shuffled copies of itself, the
/// null model an embedding has to beat. Its expectation is `k / (n - 1)`.
pub fn random_baseline_knn_preservation(x: &Matrix, k: usize, trials: usize, seed: u64) -> f64 {
    let n = x.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference: Vec<Vec<usize>> = (0..n).map(|i| brute_knn(x, i, k)).collect();
    let mut total = 0.0;
    for _ in 0..trials {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let y = x.select_rows(&order);
        let hits: usize = (0..n)
            .map(|i| {
                let near = brute_knn(&y, i, k);
                reference[i].iter().filter(|j| near.contains(j)).count()
            })
            .sum();
        total += hits as f64 / (n * k) as f64;
    }
    total / trials as f64
}

/// Random aligned labelings of length `1..=max_len` over at most `max_labels`
/// labels each.
pub fn random_labeling_pair(rng: &mut impl Rng, max_len: usize, max_labels: i64) -> (Vec<i64>, Vec<i64>) {
    let n = rng.random_range(1..=max_len);
    let kt = rng.random_range(1..=max_labels);
    let kp = rng.random_range(1..=max_labels);
    (
        (0..n).map(|_| rng.random_range(0..kt)).collect(),
        (0..n).map(|_| rng.random_range(0..kp)).collect(),
    )
}

/// `n` points in `dim` dimensions from a few random Gaussian clumps.
pub fn random_clumped_points(rng: &mut impl Rng, n: usize, dim: usize) -> Matrix {
    let groups = rng.random_range(1..=3usize);
    let centers: Vec<Vec<f64>> = (0..groups)
        .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = &centers[rng.random_range(0..groups)];
        for &v in c {
            let z: f64 = StandardNormal.sample(rng);
            data.push(v + z);
        }
    }
    Matrix::from_vec(n, dim, data).expect("sized")
}
