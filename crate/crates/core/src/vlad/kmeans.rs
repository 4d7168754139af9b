//! k-means++ seeded Lloyd iterations for codebook learning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Codebook, VladError};
use crate::matrix::{squared_euclidean, Matrix};

pub const MAX_ITERATIONS: usize = 100;
pub const RELATIVE_TOLERANCE: f64 = 1e-4;

/// Result of [`train_codebook_traced`]: the codebook and the inertia after
/// seeding followed by the inertia after every Lloyd step.
#[derive(Debug, Clone)]
pub struct CodebookTraining {
    pub codebook: Codebook,
    pub inertia: Vec<f64>,
}

/// Nearest center for each row (ties to the lower center index) and the
/// squared distance to it.
pub(crate) fn assign(points: &Matrix, centers: &Matrix) -> Vec<(usize, f64)> {
    (0..points.rows())
        .into_par_iter()
        .map(|i| nearest(points.row(i), centers))
        .collect()
}

pub(crate) fn nearest(x: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter_rows().enumerate() {
        let d = squared_euclidean(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Result<Matrix, VladError> {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n)
        .map(|i| squared_euclidean(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        if !(total > 0.0) {
            return Err(VladError::TooFewDistinct { k });
        }
        let target = rng.random_range(0.0..total);
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, &d) in dist.iter().enumerate() {
            acc += d;
            if acc > target && d > 0.0 {
                pick = i;
                break;
            }
        }
        // guard against landing on an already-covered point through rounding
        if dist[pick] == 0.0 {
            pick = dist
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .expect("non-empty");
        }
        chosen.push(pick);
        let c = points.row(pick).to_vec();
        dist.par_iter_mut().enumerate().for_each(|(i, d)| {
            *d = d.min(squared_euclidean(points.row(i), &c));
        });
    }
    Ok(points.select_rows(&chosen))
}

fn update_centers(points: &Matrix, centers: &mut Matrix, assignment: &[(usize, f64)]) {
    let (k, p) = (centers.rows(), centers.cols());
    let mut sums = Matrix::zeros(k, p);
    let mut counts = vec![0usize; k];
    for (i, &(c, _)) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    // empty clusters are re-seeded from the points farthest from their centers
    let mut by_distance: Vec<usize> = (0..points.rows()).collect();
    by_distance.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1).then(a.cmp(&b)));
    let mut donors = by_distance.into_iter();
    for c in 0..k {
        if counts[c] > 0 {
            let n = counts[c] as f64;
            for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s / n;
            }
        } else if let Some(i) = donors.next() {
            centers.row_mut(c).copy_from_slice(points.row(i));
        }
    }
}

pub fn train_codebook_traced(
    sample: &Matrix,
    k: usize,
    seed: u64,
) -> Result<CodebookTraining, VladError> {
    if k == 0 {
        return Err(VladError::InvalidArgument("codebook size must be positive".into()));
    }
    if sample.rows() < k {
        return Err(VladError::TooFewSamples {
            samples: sample.rows(),
            k,
        });
    }
    if let Some((row, col)) = sample.first_non_finite() {
        return Err(VladError::NonFinite { row, col });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(sample, k, &mut rng)?;
    let mut assignment = assign(sample, &centers);
    let mut inertia = vec![assignment.iter().map(|a| a.1).sum::<f64>()];
    for _ in 0..MAX_ITERATIONS {
        update_centers(sample, &mut centers, &assignment);
        assignment = assign(sample, &centers);
        let current: f64 = assignment.iter().map(|a| a.1).sum();
        let prev = *inertia.last().expect("seeded");
        inertia.push(current);
        if prev <= 0.0 || (prev - current) / prev < RELATIVE_TOLERANCE {
            break;
        }
    }
    Ok(CodebookTraining {
        codebook: Codebook::new(centers)?,
        inertia,
    })
}

/// Learns a `k`-center codebook. Deterministic for a given seed.
pub fn train_codebook(sample: &Matrix, k: usize, seed: u64) -> Result<Codebook, VladError> {
    train_codebook_traced(sample, k, seed).map(|t| t.codebook)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_points(n: usize, p: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * p).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::from_vec(n, p, data).unwrap()
    }

    #[test]
    fn single_center_is_column_mean() {
        let x = random_points(40, 3, 1);
        let cb = train_codebook(&x, 1, 9).unwrap();
        for (c, m) in cb.centers().row(0).iter().zip(x.column_means()) {
            assert!((c - m).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_two_separated_groups() {
        let mut rows = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for g in 0..2 {
            for _ in 0..30 {
                let off = if g == 0 { -50.0 } else { 50.0 };
                rows.push(vec![off + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            }
        }
        let x = Matrix::from_rows(&rows).unwrap();
        // oracle: group means computed directly
        let mean = |r: &[Vec<f64>]| {
            let n = r.len() as f64;
            [r.iter().map(|v| v[0]).sum::<f64>() / n, r.iter().map(|v| v[1]).sum::<f64>() / n]
        };
        let (g0, g1) = (mean(&rows[..30]), mean(&rows[30..]));
        let cb = train_codebook(&x, 2, 0).unwrap();
        let mut centers: Vec<[f64; 2]> = cb.centers().iter_rows().map(|r| [r[0], r[1]]).collect();
        centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (c, g) in centers.iter().zip([g0, g1]) {
            assert!((c[0] - g[0]).abs() < 1e-6 && (c[1] - g[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn errors_on_bad_input() {
        let x = random_points(3, 2, 0);
        assert!(matches!(train_codebook(&x, 4, 0), Err(VladError::TooFewSamples { .. })));
        let same = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(train_codebook(&same, 2, 0), Err(VladError::TooFewDistinct { .. })));
        let mut nan = random_points(5, 2, 0);
        nan.set(2, 1, f64::NAN);
        assert!(matches!(train_codebook(&nan, 2, 0), Err(VladError::NonFinite { .. })));
    }

    #[test]
    fn deterministic_for_seed() {
        let x = random_points(200, 4, 11);
        let a = train_codebook(&x, 8, 5).unwrap();
        let b = train_codebook(&x, 8, 5).unwrap();
        assert_eq!(a.centers().as_slice(), b.centers().as_slice());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn inertia_never_increases(seed in 0u64..10_000, k in 1usize..10, n in 10usize..120) {
            let x = random_points(n.max(k), 3, seed);
            let t = train_codebook_traced(&x, k, seed).unwrap();
            prop_assert!(t.inertia.len() >= 2);
            for w in t.inertia.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
    }
}
