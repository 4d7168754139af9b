//! Clustering-vs-ground-truth scores: V-measure and adjusted mutual
//! information (AMI). All logarithms are natural.
//!
//! AMI follows the hypergeometric permutation model:
//!
//! ```text
//! AMI = (MI - E[MI]) / (norm(H(U), H(V)) - E[MI])
//! ```
//!
//! with the arithmetic mean of the two entropies as the default normalizer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NOISE: i64 = -1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("label length mismatch: {0} true vs {1} predicted")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("contingency table is ragged")]
    Ragged,
}

/// How predicted noise labels (`-1`) enter the contingency table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoisePolicy {
    /// All noise points form one ordinary cluster.
    #[default]
    SingleCluster,
    /// Every noise point is its own cluster.
    Singletons,
}

/// Normalizer applied to the entropies in the AMI denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmiNorm {
    #[default]
    Arithmetic,
    Max,
    Min,
    Geometric,
}

impl AmiNorm {
    fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            AmiNorm::Arithmetic => 0.5 * (a + b),
            AmiNorm::Max => a.max(b),
            AmiNorm::Min => a.min(b),
            AmiNorm::Geometric => (a * b).sqrt(),
        }
    }
}

/// `R x S` counts: rows are true classes, columns predicted clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    total: u64,
}

impl ContingencyTable {
    /// Builds a table from explicit counts. Empty rows and columns are kept.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let s = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != s) {
            return Err(MetricsError::Ragged);
        }
        let row_sums: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums: Vec<u64> = (0..s).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        let total = row_sums.iter().sum();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total,
        })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

pub fn contingency(
    true_labels: &[i64],
    pred_labels: &[i64],
    noise_policy: NoisePolicy,
) -> Result<ContingencyTable, MetricsError> {
    if true_labels.len() != pred_labels.len() {
        return Err(MetricsError::LengthMismatch(true_labels.len(), pred_labels.len()));
    }
    let index_of = |labels: &mut dyn Iterator<Item = i64>| {
        let mut map = BTreeMap::new();
        for l in labels {
            map.entry(l).or_insert(0usize);
        }
        for (k, v) in map.values_mut().enumerate() {
            *v = k;
        }
        map
    };
    let rows = index_of(&mut true_labels.iter().copied());
    let clusters = index_of(&mut pred_labels.iter().copied().filter(|&l| l != NOISE));
    let noise_points = pred_labels.iter().filter(|&&l| l == NOISE).count();
    let extra = match noise_policy {
        NoisePolicy::SingleCluster => usize::from(noise_points > 0),
        NoisePolicy::Singletons => noise_points,
    };
    let mut counts = vec![vec![0u64; clusters.len() + extra]; rows.len()];
    let mut next_noise = clusters.len();
    for (t, p) in true_labels.iter().zip(pred_labels) {
        let col = if *p == NOISE {
            match noise_policy {
                NoisePolicy::SingleCluster => clusters.len(),
                NoisePolicy::Singletons => {
                    next_noise += 1;
                    next_noise - 1
                }
            }
        } else {
            clusters[p]
        };
        counts[rows[t]][col] += 1;
    }
    ContingencyTable::from_counts(counts)
}

/// `ln(k!)` for `k = 0..=n`.
fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

fn entropy_of(weights: &[u64], total: u64) -> f64 {
    let n = total as f64;
    weights
        .iter()
        .filter(|&&w| w > 0)
        .map(|&w| {
            let p = w as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn entropy(weights: &[u64]) -> Result<f64, MetricsError> {
    let total: u64 = weights.iter().sum();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(entropy_of(weights, total))
}

pub fn mutual_information(table: &ContingencyTable) -> f64 {
    let n = table.total as f64;
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        let a = table.row_sums[i] as f64;
        for (j, &nij) in row.iter().enumerate() {
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            let b = table.col_sums[j] as f64;
            mi += nij / n * (n * nij / (a * b)).ln();
        }
    }
    mi.max(0.0)
}

/// Expected mutual information under random permutations with fixed
/// marginals, summed in log space.
pub fn expected_mutual_information(table: &ContingencyTable) -> f64 {
    let total = table.total;
    if total == 0 {
        return 0.0;
    }
    let lf = ln_factorials(total);
    let n = total as f64;
    let mut emi = 0.0;
    for &a in table.row_sums.iter().filter(|&&a| a > 0) {
        for &b in table.col_sums.iter().filter(|&&b| b > 0) {
            let start = 1.max((a + b).saturating_sub(total));
            let end = a.min(b);
            let fixed = lf[a as usize] + lf[b as usize] + lf[(total - a) as usize]
                + lf[(total - b) as usize]
                - lf[total as usize];
            let ln_ab = ((a as f64) * (b as f64)).ln();
            for k in start..=end {
                let kf = k as f64;
                let ln_p = fixed
                    - lf[k as usize]
                    - lf[(a - k) as usize]
                    - lf[(b - k) as usize]
                    - lf[(total + k - a - b) as usize];
                emi += kf / n * ((n * kf).ln() - ln_ab) * ln_p.exp();
            }
        }
    }
    emi
}

pub fn ami(table: &ContingencyTable) -> f64 {
    ami_with_norm(table, AmiNorm::Arithmetic)
}

pub fn ami_with_norm(table: &ContingencyTable, norm: AmiNorm) -> f64 {
    let mi = mutual_information(table);
    let emi = expected_mutual_information(table);
    let h_true = entropy_of(&table.row_sums, table.total);
    let h_pred = entropy_of(&table.col_sums, table.total);
    let normalizer = norm.combine(h_true, h_pred);
    let denom = normalizer - emi;
    if (mi - emi).abs() <= 1e-12 * mi.max(1.0) {
        return if denom.abs() <= 1e-12 * normalizer.max(1.0) {
            1.0
        } else {
            0.0
        };
    }
    let denom = if denom < 0.0 {
        denom.min(-f64::EPSILON)
    } else {
        denom.max(f64::EPSILON)
    };
    (mi - emi) / denom
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

pub fn v_measure(table: &ContingencyTable) -> VMeasure {
    let n = table.total as f64;
    let h_true = entropy_of(&table.row_sums, table.total);
    let h_pred = entropy_of(&table.col_sums, table.total);
    let (mut h_true_given_pred, mut h_pred_given_true) = (0.0, 0.0);
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            h_true_given_pred -= nij / n * (nij / table.col_sums[j] as f64).ln();
            h_pred_given_true -= nij / n * (nij / table.row_sums[i] as f64).ln();
        }
    }
    let homogeneity = if h_true == 0.0 {
        1.0
    } else {
        1.0 - h_true_given_pred / h_true
    };
    let completeness = if h_pred == 0.0 {
        1.0
    } else {
        1.0 - h_pred_given_true / h_pred
    };
    let v = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    VMeasure {
        homogeneity,
        completeness,
        v_measure: v,
    }
}

/// Both scores for one labeling, as reported by the `evaluate` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub v_measure: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub ami: f64,
}

pub fn score(
    true_labels: &[i64],
    pred_labels: &[i64],
    noise_policy: NoisePolicy,
    norm: AmiNorm,
) -> Result<ClusteringScores, MetricsError> {
    if true_labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let table = contingency(true_labels, pred_labels, noise_policy)?;
    let v = v_measure(&table);
    Ok(ClusteringScores {
        v_measure: v.v_measure,
        homogeneity: v.homogeneity,
        completeness: v.completeness,
        ami: ami_with_norm(&table, norm),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(t: &[i64], p: &[i64]) -> ContingencyTable {
        contingency(t, p, NoisePolicy::SingleCluster).unwrap()
    }

    #[test]
    fn contingency_identity_and_noise_policies() {
        let t = table(&[0, 0, 1, 1], &[0, 0, 1, 1]);
        assert_eq!(t.counts(), &[vec![2, 0], vec![0, 2]]);
        let single = contingency(&[0, 0, 1, 1], &[-1; 4], NoisePolicy::SingleCluster).unwrap();
        assert_eq!(single.col_sums(), &[4]);
        let singles = contingency(&[0, 0, 1, 1], &[-1; 4], NoisePolicy::Singletons).unwrap();
        assert_eq!(singles.col_sums(), &[1, 1, 1, 1]);
        assert_eq!(
            contingency(&[0], &[0, 1], NoisePolicy::SingleCluster),
            Err(MetricsError::LengthMismatch(1, 2))
        );
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[7]).unwrap(), 0.0);
        assert!((entropy(&[1, 1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let want = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((entropy(&[3, 1]).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.5623).abs() < 1e-4);
        assert_eq!(entropy(&[0, 0]), Err(MetricsError::Empty));
    }

    #[test]
    fn mutual_information_examples() {
        let diag = ContingencyTable::from_counts(vec![vec![2, 0], vec![0, 2]]).unwrap();
        assert!((mutual_information(&diag) - std::f64::consts::LN_2).abs() < 1e-15);
        let indep = ContingencyTable::from_counts(vec![vec![1, 1], vec![1, 1]]).unwrap();
        assert!(mutual_information(&indep).abs() < 1e-15);
    }

    #[test]
    fn emi_zero_for_single_class() {
        let t = ContingencyTable::from_counts(vec![vec![2, 3, 1]]).unwrap();
        assert_eq!(expected_mutual_information(&t), 0.0);
    }

    #[test]
    fn emi_diag_one_one_is_closed_form() {
        // N=2, both labelings all-distinct: every permutation has MI = ln 2
        let t = ContingencyTable::from_counts(vec![vec![1, 0], vec![0, 1]]).unwrap();
        assert!((expected_mutual_information(&t) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn ami_examples() {
        assert!((ami(&table(&[0, 0, 1, 1], &[0, 0, 1, 1])) - 1.0).abs() < 1e-12);
        assert_eq!(ami(&table(&[0, 0, 1, 1], &[5, 5, 5, 5])), 0.0);
        assert_eq!(ami(&table(&[3, 3, 3], &[1, 1, 1])), 1.0);
        assert_eq!(ami(&table(&[0, 1, 2], &[4, 5, 6])), 1.0);
        // reference value from an independent implementation
        let v = ami(&table(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]));
        assert!((v - 0.298_792_458_170_890_1).abs() < 1e-12, "{v}");
    }

    #[test]
    fn v_measure_examples() {
        let perfect = v_measure(&table(&[0, 0, 1, 1], &[1, 1, 0, 0]));
        assert_eq!((perfect.homogeneity, perfect.completeness, perfect.v_measure), (1.0, 1.0, 1.0));

        let v = v_measure(&table(&[0, 0, 1, 1], &[0, 0, 0, 1]));
        assert!((v.homogeneity - 0.311_278_124_459_132_8).abs() < 1e-12);
        assert!((v.completeness - 0.383_688_546_596_344_3).abs() < 1e-12);
        assert!((v.v_measure - 0.343_711_018_485_450_8).abs() < 1e-12);

        let singles = v_measure(&table(&[0, 0, 1, 1], &[0, 1, 2, 3]));
        assert_eq!(singles.homogeneity, 1.0);
        assert!(singles.completeness < 1.0);
    }

    #[test]
    fn ami_norm_variants_order() {
        let t = table(&[0, 0, 0, 1, 1, 1, 2, 2], &[0, 0, 1, 1, 1, 2, 2, 2]);
        let by = |n| ami_with_norm(&t, n);
        // a larger normalizer means a smaller score
        assert!(by(AmiNorm::Max) <= by(AmiNorm::Arithmetic) + 1e-15);
        assert!(by(AmiNorm::Arithmetic) <= by(AmiNorm::Geometric) + 1e-15);
        assert!(by(AmiNorm::Geometric) <= by(AmiNorm::Min) + 1e-15);
    }

    #[test]
    fn agrees_with_enumeration_oracle() {
        use crate::testkit::{oracle_ami, oracle_emi, oracle_v_measure, random_labeling_pair};
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let (t, p) = random_labeling_pair(&mut rng, 8, 4);
            let tab = table(&t, &p);
            assert!((expected_mutual_information(&tab) - oracle_emi(&tab).unwrap()).abs() < 1e-10);
            assert!((ami(&tab) - oracle_ami(&t, &p).unwrap()).abs() < 1e-10, "{t:?} {p:?}");
            let (h, c, v) = oracle_v_measure(&t, &p);
            let got = v_measure(&tab);
            assert!((got.homogeneity - h).abs() < 1e-12);
            assert!((got.completeness - c).abs() < 1e-12);
            assert!((got.v_measure - v).abs() < 1e-12);
        }
    }

    fn labels(max_len: usize) -> impl Strategy<Value = (Vec<i64>, Vec<i64>)> {
        (1..=max_len).prop_flat_map(|n| {
            (
                proptest::collection::vec(0i64..4, n),
                proptest::collection::vec(0i64..4, n),
            )
        })
    }

    proptest! {
        #[test]
        fn mi_bounded_by_entropies((t, p) in labels(30)) {
            let tab = table(&t, &p);
            let mi = mutual_information(&tab);
            let ht = entropy(tab.row_sums()).unwrap();
            let hp = entropy(tab.col_sums()).unwrap();
            prop_assert!(mi <= ht.min(hp) + 1e-12);
        }

        #[test]
        fn scores_invariant_to_relabeling((t, p) in labels(20), shift in 1i64..50) {
            let a = table(&t, &p);
            let renamed: Vec<i64> = p.iter().map(|x| 3 - x + shift).collect();
            let truth_renamed: Vec<i64> = t.iter().map(|x| x * 7 + shift).collect();
            let b = table(&truth_renamed, &renamed);
            prop_assert!((ami(&a) - ami(&b)).abs() < 1e-12);
            let (va, vb) = (v_measure(&a), v_measure(&b));
            prop_assert!((va.v_measure - vb.v_measure).abs() < 1e-12);
        }

        #[test]
        fn v_is_between_h_and_c((t, p) in labels(20)) {
            let v = v_measure(&table(&t, &p));
            prop_assert!(v.homogeneity.min(v.completeness) - 1e-12 <= v.v_measure);
            prop_assert!(v.v_measure <= v.homogeneity.max(v.completeness) + 1e-12);
        }

        #[test]
        fn ami_is_one_on_identical_partitions(t in proptest::collection::vec(0i64..5, 2..20)) {
            let p: Vec<i64> = t.iter().map(|x| 10 - x).collect();
            prop_assert!((ami(&table(&t, &p)) - 1.0).abs() < 1e-12);
        }
    }
}
