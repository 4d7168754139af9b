//! Pairwise controlled manifold approximation (PaCMAP): neighbor, mid-near
//! and further pairs, then a three-phase weighted Adam optimization of the
//! embedding.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knn::knn_table;
use crate::matrix::{squared_euclidean, Matrix};
use crate::vlad::{pca_fit, pca_project, VladError};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-7;
const EXTRA_CANDIDATES: usize = 50;
const SIGMA_FLOOR: f64 = 1e-10;
const MIDNEAR_SAMPLES: usize = 6;
const INIT_SCALE: f64 = 0.01;
/// Attempts at drawing a mid-near partner not already used by the same point.
const MIDNEAR_RETRIES: usize = 32;

#[derive(Debug, Error)]
pub enum PacmapError {
    #[error("invalid pacmap config: {0}")]
    InvalidConfig(String),
    #[error("need more than n_neighbors = {n_neighbors} points, got {points}")]
    TooFewPoints { points: usize, n_neighbors: usize },
    #[error("non-finite input at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("k = {k} must be below the number of points {points}")]
    InvalidK { k: usize, points: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Pca(#[from] VladError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PacmapConfig {
    pub dim: usize,
    pub n_neighbors: usize,
    pub mn_ratio: f64,
    pub fp_ratio: f64,
    /// Lengths of the three optimization phases.
    pub iters: [usize; 3],
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PacmapConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            n_neighbors: 10,
            mn_ratio: 0.5,
            fp_ratio: 2.0,
            iters: [100, 100, 250],
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

impl PacmapConfig {
    pub fn validate(&self) -> Result<(), PacmapError> {
        let bad = |m: &str| Err(PacmapError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.n_neighbors == 0 {
            return bad("n_neighbors must be at least 1");
        }
        if !(self.mn_ratio >= 0.0 && self.mn_ratio.is_finite()) {
            return bad("mn_ratio must be a nonnegative number");
        }
        if !(self.fp_ratio >= 0.0 && self.fp_ratio.is_finite()) {
            return bad("fp_ratio must be a nonnegative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    pub fn midnear_per_point(&self) -> usize {
        (self.n_neighbors as f64 * self.mn_ratio).round() as usize
    }

    pub fn further_per_point(&self) -> usize {
        (self.n_neighbors as f64 * self.fp_ratio).round() as usize
    }

    pub fn total_iters(&self) -> usize {
        self.iters.iter().sum()
    }
}

/// Index pairs `(i, j)`, grouped by source point `i` in ascending order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSets {
    pub neighbor_pairs: Vec<(usize, usize)>,
    pub midnear_pairs: Vec<(usize, usize)>,
    pub further_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairWeights {
    pub neighbor: f64,
    pub midnear: f64,
    pub further: f64,
}

/// Weights used at 0-based `iteration` of a schedule with the given phase
/// lengths.
pub fn phase_weights(iteration: usize, iters: [usize; 3]) -> PairWeights {
    if iteration < iters[0] {
        let t = iteration as f64 / iters[0] as f64;
        PairWeights {
            neighbor: 2.0,
            midnear: (1.0 - t) * 1000.0 + t * 3.0,
            further: 1.0,
        }
    } else if iteration < iters[0] + iters[1] {
        PairWeights {
            neighbor: 2.0,
            midnear: 3.0,
            further: 1.0,
        }
    } else {
        final_weights()
    }
}

pub fn final_weights() -> PairWeights {
    PairWeights {
        neighbor: 1.0,
        midnear: 0.0,
        further: 1.0,
    }
}

fn check_finite(x: &Matrix) -> Result<(), PacmapError> {
    match x.first_non_finite() {
        Some((row, col)) => Err(PacmapError::NonFinite { row, col }),
        None => Ok(()),
    }
}

/// For every point, its `n_neighbors` nearest points under the scaled
/// distance `d^2 / (sigma_i * sigma_j)`, chosen from the Euclidean nearest
/// `n_neighbors + 50` candidates.
pub fn build_knn_pairs(x: &Matrix, config: &PacmapConfig) -> Result<Vec<(usize, usize)>, PacmapError> {
    let n = x.rows();
    let k = config.n_neighbors;
    if n <= k {
        return Err(PacmapError::TooFewPoints {
            points: n,
            n_neighbors: k,
        });
    }
    check_finite(x)?;
    let pool = (n - 1).min(k + EXTRA_CANDIDATES);
    let table = knn_table(x, pool);
    let sigma: Vec<f64> = table
        .iter()
        .map(|nb| {
            let d = &nb.distances;
            let lo = 3.min(d.len() - 1);
            let hi = 6.min(d.len());
            let s = d[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            s.max(SIGMA_FLOOR)
        })
        .collect();
    let mut pairs = Vec::with_capacity(n * k);
    for (i, nb) in table.iter().enumerate() {
        let mut scaled: Vec<(f64, usize)> = nb
            .indices
            .iter()
            .zip(&nb.distances)
            .map(|(&j, &d)| (d * d / (sigma[i] * sigma[j]), j))
            .collect();
        // stable: candidates already ordered by (distance, index)
        scaled.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.extend(scaled.iter().take(k).map(|&(_, j)| (i, j)));
    }
    Ok(pairs)
}

/// Draws the mid-near and further pairs. Deterministic for `config.seed`.
pub fn sample_pairs(
    x: &Matrix,
    neighbor_pairs: &[(usize, usize)],
    config: &PacmapConfig,
) -> Result<PairSets, PacmapError> {
    let n = x.rows();
    if n < 2 {
        return Err(PacmapError::TooFewPoints {
            points: n,
            n_neighbors: config.n_neighbors,
        });
    }
    let mut neighbors = vec![Vec::new(); n];
    for &(i, j) in neighbor_pairs {
        if i >= n || j >= n {
            return Err(PacmapError::Shape(format!("pair ({i}, {j}) out of range for {n} points")));
        }
        neighbors[i].push(j);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_mn = config.midnear_per_point();
    let n_fp = config.further_per_point();
    let draws = MIDNEAR_SAMPLES.min(n - 1);
    // 2nd-nearest of 6 draws; with fewer than 6 others available, the nearest
    let rank = usize::from(draws == MIDNEAR_SAMPLES);
    let mut midnear_pairs = Vec::with_capacity(n * n_mn);
    let mut further_pairs = Vec::with_capacity(n * n_fp);
    for i in 0..n {
        let mut chosen: Vec<usize> = Vec::with_capacity(n_mn);
        for _ in 0..n_mn {
            let mut pick = 0;
            for _ in 0..MIDNEAR_RETRIES {
                let mut cand: Vec<(f64, usize)> = sample(&mut rng, n - 1, draws)
                    .into_iter()
                    .map(|s| if s >= i { s + 1 } else { s })
                    .map(|j| (squared_euclidean(x.row(i), x.row(j)), j))
                    .collect();
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                pick = cand[rank].1;
                if !chosen.contains(&pick) {
                    break;
                }
            }
            chosen.push(pick);
            midnear_pairs.push((i, pick));
        }

        let excluded = &neighbors[i];
        let pool = n - 1 - excluded.iter().filter(|&&j| j != i).count().min(n - 1);
        let mut taken: Vec<usize> = Vec::with_capacity(n_fp);
        for _ in 0..n_fp {
            let j = loop {
                let j = rng.random_range(0..n);
                if j == i || (pool > 0 && excluded.contains(&j)) {
                    continue;
                }
                if taken.len() < pool && taken.contains(&j) {
                    continue;
                }
                break j;
            };
            taken.push(j);
            further_pairs.push((i, j));
        }
    }
    Ok(PairSets {
        neighbor_pairs: neighbor_pairs.to_vec(),
        midnear_pairs,
        further_pairs,
    })
}

#[derive(Clone, Copy)]
enum Kind {
    Neighbor,
    Midnear,
    Further,
}

/// Loss contribution and gradient coefficient `c` of one pair; the gradient
/// with respect to `y_i` is `c * (y_i - y_j)`.
fn pair_terms(kind: Kind, w: PairWeights, dist_sq: f64) -> (f64, f64) {
    let dt = dist_sq + 1.0;
    match kind {
        Kind::Neighbor => {
            let den = 10.0 + dt;
            (w.neighbor * dt / den, w.neighbor * 20.0 / (den * den))
        }
        Kind::Midnear => {
            let den = 10_000.0 + dt;
            (w.midnear * dt / den, w.midnear * 20_000.0 / (den * den))
        }
        Kind::Further => {
            let den = 1.0 + dt;
            (w.further / den, -w.further * 2.0 / (den * den))
        }
    }
}

fn all_pairs(pairs: &PairSets) -> impl Iterator<Item = (Kind, usize, usize)> + '_ {
    pairs
        .neighbor_pairs
        .iter()
        .map(|&(i, j)| (Kind::Neighbor, i, j))
        .chain(pairs.midnear_pairs.iter().map(|&(i, j)| (Kind::Midnear, i, j)))
        .chain(pairs.further_pairs.iter().map(|&(i, j)| (Kind::Further, i, j)))
}

pub fn pacmap_loss(y: &Matrix, pairs: &PairSets, weights: PairWeights) -> f64 {
    all_pairs(pairs)
        .map(|(kind, i, j)| pair_terms(kind, weights, squared_euclidean(y.row(i), y.row(j))).0)
        .sum()
}

/// Per-point incidence lists `(pair index, partner)` over the concatenated
/// pair list, so each gradient row is summed in a fixed order.
struct Incidence {
    kinds: Vec<Kind>,
    ends: Vec<(usize, usize)>,
    by_point: Vec<Vec<(usize, usize)>>,
}

impl Incidence {
    fn new(pairs: &PairSets, n: usize) -> Self {
        let (mut kinds, mut ends) = (Vec::new(), Vec::new());
        let mut by_point = vec![Vec::new(); n];
        for (p, (kind, i, j)) in all_pairs(pairs).enumerate() {
            kinds.push(kind);
            ends.push((i, j));
            by_point[i].push((p, j));
            by_point[j].push((p, i));
        }
        Self { kinds, ends, by_point }
    }

    fn loss_and_gradient(&self, y: &Matrix, weights: PairWeights, grad: &mut Matrix) -> f64 {
        let terms: Vec<(f64, f64)> = self
            .ends
            .par_iter()
            .zip(self.kinds.par_iter())
            .map(|(&(i, j), &kind)| pair_terms(kind, weights, squared_euclidean(y.row(i), y.row(j))))
            .collect();
        let dim = y.cols();
        grad.as_mut_slice()
            .par_chunks_mut(dim.max(1))
            .enumerate()
            .for_each(|(q, g)| {
                g.fill(0.0);
                let yq = y.row(q);
                for &(p, other) in &self.by_point[q] {
                    let c = terms[p].1;
                    for ((gk, a), b) in g.iter_mut().zip(yq).zip(y.row(other)) {
                        *gk += c * (a - b);
                    }
                }
            });
        terms.iter().map(|t| t.0).sum()
    }
}

/// Loss and its analytic gradient with respect to every coordinate of `y`.
pub fn loss_and_gradient(y: &Matrix, pairs: &PairSets, weights: PairWeights) -> (f64, Matrix) {
    let inc = Incidence::new(pairs, y.rows());
    let mut grad = Matrix::zeros(y.rows(), y.cols());
    let loss = inc.loss_and_gradient(y, weights, &mut grad);
    (loss, grad)
}

#[derive(Debug, Clone)]
pub struct PacmapFit {
    pub embedding: Matrix,
    pub pairs: PairSets,
    /// Loss before each update, under that iteration's weights.
    pub loss_trace: Vec<f64>,
    /// Loss of the initial and final layouts, both under the final-phase
    /// weights.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub random_init: bool,
}

fn initial_layout(x: &Matrix, dim: usize, seed: u64) -> Result<(Matrix, bool), PacmapError> {
    match pca_fit(x, dim) {
        Ok(model) => {
            let mut y = pca_project(&model, x)?;
            y.as_mut_slice().iter_mut().for_each(|v| *v *= INIT_SCALE);
            Ok((y, false))
        }
        Err(VladError::RankDeficient { .. } | VladError::TargetTooLarge { .. }) => {
            log::debug!("pca init unavailable for {} points into {dim} dims; random init", x.rows());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let data = (0..x.rows() * dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    INIT_SCALE * z
                })
                .collect();
            Ok((Matrix::from_vec(x.rows(), dim, data).expect("sized"), true))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn pacmap_fit_traced(x: &Matrix, config: &PacmapConfig) -> Result<PacmapFit, PacmapError> {
    config.validate()?;
    let n = x.rows();
    if n < 2 {
        return Err(PacmapError::TooFewPoints {
            points: n,
            n_neighbors: config.n_neighbors,
        });
    }
    check_finite(x)?;
    let effective = PacmapConfig {
        n_neighbors: config.n_neighbors.min(n - 1),
        ..config.clone()
    };
    let neighbor_pairs = build_knn_pairs(x, &effective)?;
    let pairs = sample_pairs(x, &neighbor_pairs, &effective)?;
    let (mut y, random_init) = initial_layout(x, config.dim, config.seed)?;
    let inc = Incidence::new(&pairs, n);
    let initial_loss = pacmap_loss(&y, &pairs, final_weights());

    let len = y.as_slice().len();
    let (mut m1, mut m2) = (vec![0.0; len], vec![0.0; len]);
    let mut grad = Matrix::zeros(n, config.dim);
    let total = config.total_iters();
    let mut loss_trace = Vec::with_capacity(total);
    for it in 0..total {
        let loss = inc.loss_and_gradient(&y, phase_weights(it, config.iters), &mut grad);
        if !loss.is_finite() || !grad.is_finite() {
            return Err(PacmapError::Diverged { iteration: it });
        }
        loss_trace.push(loss);
        let t = (it + 1) as i32;
        let step = config.learning_rate * (1.0 - BETA2.powi(t)).sqrt() / (1.0 - BETA1.powi(t));
        y.as_mut_slice()
            .par_iter_mut()
            .zip(m1.par_iter_mut())
            .zip(m2.par_iter_mut())
            .zip(grad.as_slice().par_iter())
            .for_each(|(((yk, a), b), &g)| {
                *a += (1.0 - BETA1) * (g - *a);
                *b += (1.0 - BETA2) * (g * g - *b);
                *yk -= step * *a / (b.sqrt() + ADAM_EPS);
            });
    }
    let final_loss = pacmap_loss(&y, &pairs, final_weights());
    if !final_loss.is_finite() || !y.is_finite() {
        return Err(PacmapError::Diverged { iteration: total });
    }
    Ok(PacmapFit {
        embedding: y,
        pairs,
        loss_trace,
        initial_loss,
        final_loss,
        random_init,
    })
}

/// Embeds the rows of `x` into `config.dim` dimensions.
pub fn pacmap_fit(x: &Matrix, config: &PacmapConfig) -> Result<Matrix, PacmapError> {
    pacmap_fit_traced(x, config).map(|f| f.embedding)
}

/// Mean fraction of each point's `k` nearest neighbors in `x` that are also
/// among its `k` nearest neighbors in `y`.
pub fn knn_preservation(x: &Matrix, y: &Matrix, k: usize) -> Result<f64, PacmapError> {
    let n = x.rows();
    if y.rows() != n {
        return Err(PacmapError::Shape(format!("{} vs {} rows", n, y.rows())));
    }
    if k == 0 || k >= n {
        return Err(PacmapError::InvalidK { k, points: n });
    }
    let (a, b) = (knn_table(x, k), knn_table(y, k));
    let hits: usize = a
        .iter()
        .zip(&b)
        .map(|(p, q)| p.indices.iter().filter(|j| q.indices.contains(j)).count())
        .sum();
    Ok(hits as f64 / (n * k) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{oracle_finite_diff, relative_error};
    use proptest::prelude::*;
    use rand::Rng;

    fn blobs(per: usize, dim: usize, gap: f64, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        for g in 0..2 {
            for _ in 0..per {
                for c in 0..dim {
                    let off = if c == 0 && g == 1 { gap } else { 0.0 };
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(off + z);
                }
            }
        }
        Matrix::from_vec(2 * per, dim, data).unwrap()
    }

    fn small_config(dim: usize) -> PacmapConfig {
        PacmapConfig {
            dim,
            ..PacmapConfig::default()
        }
    }

    #[test]
    fn collinear_three_points() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [10.0]]).unwrap();
        let cfg = PacmapConfig {
            n_neighbors: 1,
            ..PacmapConfig::default()
        };
        assert_eq!(build_knn_pairs(&x, &cfg).unwrap(), vec![(0, 1), (1, 0), (2, 1)]);
    }

    #[test]
    fn duplicates_pair_with_each_other() {
        let base = [[0.0, 0.0], [3.0, 1.0], [-2.0, 5.0], [7.0, -4.0]];
        let rows: Vec<[f64; 2]> = base.iter().flat_map(|r| [*r, *r]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let cfg = PacmapConfig {
            n_neighbors: 1,
            ..PacmapConfig::default()
        };
        for (i, j) in build_knn_pairs(&x, &cfg).unwrap() {
            assert_eq!(i / 2, j / 2);
            assert_ne!(i, j);
        }
    }

    #[test]
    fn pair_counts_and_determinism() {
        let x = blobs(50, 4, 5.0, 1);
        let cfg = PacmapConfig::default();
        let nb = build_knn_pairs(&x, &cfg).unwrap();
        assert_eq!(nb.len(), 100 * 10);
        let a = sample_pairs(&x, &nb, &cfg).unwrap();
        assert_eq!(a.midnear_pairs.len(), 500);
        assert_eq!(a.further_pairs.len(), 2000);
        assert_eq!(a, sample_pairs(&x, &nb, &cfg).unwrap());
        for &(i, j) in a.further_pairs.iter().chain(&a.midnear_pairs) {
            assert!(i != j && i < 100 && j < 100);
        }
        let nbset: std::collections::HashSet<_> = nb.iter().collect();
        assert!(a.further_pairs.iter().all(|p| !nbset.contains(p)));

        let none = PacmapConfig {
            mn_ratio: 0.0,
            ..cfg
        };
        assert!(sample_pairs(&x, &nb, &none).unwrap().midnear_pairs.is_empty());
    }

    #[test]
    fn neighbor_lists_have_no_duplicates() {
        let x = blobs(30, 3, 4.0, 8);
        let nb = build_knn_pairs(&x, &PacmapConfig::default()).unwrap();
        for chunk in nb.chunks(10) {
            let mut js: Vec<usize> = chunk.iter().map(|p| p.1).collect();
            js.sort_unstable();
            js.dedup();
            assert_eq!(js.len(), 10);
        }
    }

    #[test]
    fn errors() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(matches!(
            build_knn_pairs(&x, &PacmapConfig::default()),
            Err(PacmapError::TooFewPoints { .. })
        ));
        let mut bad = blobs(10, 2, 1.0, 0);
        bad.set(3, 1, f64::INFINITY);
        assert!(matches!(
            build_knn_pairs(&bad, &PacmapConfig::default()),
            Err(PacmapError::NonFinite { row: 3, col: 1 })
        ));
        assert!(PacmapConfig { dim: 0, ..PacmapConfig::default() }.validate().is_err());
        assert!(PacmapConfig { mn_ratio: -1.0, ..PacmapConfig::default() }.validate().is_err());
    }

    #[test]
    fn two_points_separate() {
        let x = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let y = pacmap_fit(&x, &small_config(4)).unwrap();
        assert_eq!((y.rows(), y.cols()), (2, 4));
        assert!(y.is_finite());
        assert_ne!(y.row(0), y.row(1));
    }

    #[test]
    fn loss_decreases_on_two_blobs() {
        let x = blobs(100, 10, 12.0, 3);
        let fit = pacmap_fit_traced(&x, &small_config(2)).unwrap();
        assert!(fit.final_loss < fit.initial_loss, "{} vs {}", fit.final_loss, fit.initial_loss);
        assert_eq!(fit.loss_trace.len(), 450);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = blobs(5, 3, 3.0, 2);
        let cfg = PacmapConfig {
            n_neighbors: 3,
            ..small_config(3)
        };
        let nb = build_knn_pairs(&x, &cfg).unwrap();
        let pairs = sample_pairs(&x, &nb, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = Matrix::from_vec(10, 3, (0..30).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        for w in [phase_weights(0, cfg.iters), phase_weights(150, cfg.iters), final_weights()] {
            let (_, g) = loss_and_gradient(&y, &pairs, w);
            let fd = oracle_finite_diff(|p| pacmap_loss(p, &pairs, w), &y, 1e-4);
            for (a, f) in g.as_slice().iter().zip(fd.as_slice()) {
                if a.abs() > 1e-8 {
                    assert!(relative_error(*a, *f) < 1e-4, "{a} vs {f}");
                }
            }
        }
    }

    #[test]
    fn deterministic_fit() {
        let x = blobs(20, 5, 6.0, 4);
        let cfg = small_config(3);
        let a = pacmap_fit(&x, &cfg).unwrap();
        let b = pacmap_fit(&x, &cfg).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn preservation_identity_and_null() {
        let x = blobs(250, 3, 0.0, 6);
        assert_eq!(knn_preservation(&x, &x, 10).unwrap(), 1.0);
        let mut order: Vec<usize> = (0..500).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let shuffled = x.select_rows(&order);
        let p = knn_preservation(&x, &shuffled, 10).unwrap();
        assert!(p < 2.0 * 10.0 / 499.0, "{p}");
        assert!(matches!(knn_preservation(&x, &x, 500), Err(PacmapError::InvalidK { .. })));
    }

    #[test]
    fn embedding_beats_permutation_null() {
        let x = blobs(60, 8, 10.0, 9);
        let y = pacmap_fit(&x, &small_config(2)).unwrap();
        let p = knn_preservation(&x, &y, 10).unwrap();
        assert!(p > 2.0 * 10.0 / 119.0, "{p}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn translation_leaves_pairs_unchanged(seed in 0u64..1000, shift in -8i32..8) {
            // dyadic coordinates keep the translated differences exact
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..40 * 3).map(|_| rng.random_range(-64i32..64) as f64 / 8.0).collect();
            let x = Matrix::from_vec(40, 3, data.clone()).unwrap();
            let moved = Matrix::from_vec(40, 3, data.iter().map(|v| v + shift as f64 * 0.5).collect()).unwrap();
            let cfg = PacmapConfig { n_neighbors: 5, ..PacmapConfig::default() };
            prop_assert_eq!(build_knn_pairs(&x, &cfg).unwrap(), build_knn_pairs(&moved, &cfg).unwrap());
        }

        #[test]
        fn output_always_finite(seed in 0u64..1000, n in 2usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1e3..1e3)).collect();
            let x = Matrix::from_vec(n, 3, data).unwrap();
            let cfg = PacmapConfig { dim: 2, iters: [20, 20, 20], seed, ..PacmapConfig::default() };
            prop_assert!(pacmap_fit(&x, &cfg).unwrap().is_finite());
        }
    }
}
