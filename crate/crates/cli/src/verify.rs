//! The oracle battery behind `framesplit verify`: every check compares the
//! library against an independent reference or a stated bound.

use framesplit::corpus::{CorpusManifest, FrameRecord};
use framesplit::descriptors::LocalDescriptorSet;
use framesplit::hdbscan::{build_mst, core_distances, extract_clusters, HdbscanParams};
use framesplit::metrics::{
    ami, contingency, expected_mutual_information, v_measure, NoisePolicy,
};
use framesplit::pacmap::{
    build_knn_pairs, loss_and_gradient, pacmap_fit_traced, pacmap_loss, phase_weights, sample_pairs, PacmapConfig,
};
use framesplit::splitter::{
    assign_clusters, group_noise, leakage_report, partition_map, random_frame_split, Group, NoiseGrouping, Partition,
    SplitSpec,
};
use framesplit::testkit::{
    labelings_agree, oracle_ami, oracle_emi, oracle_finite_diff, oracle_tiny_hdbscan_full, oracle_v_measure,
    random_clumped_points, random_labeling_pair, relative_error, OracleReport,
};
use framesplit::vlad::{train_codebook_traced, vlad_encode, Codebook};
use framesplit::Matrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::CliError;

/// Case counts for each battery section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatterySize {
    pub metric_pairs: usize,
    pub gradient_instances: usize,
    pub loss_runs: usize,
    pub blob_seeds: usize,
    pub tiny_hdbscan: usize,
    pub split_instances: usize,
    pub vlad_frames: usize,
    pub kmeans_instances: usize,
}

impl Default for BatterySize {
    fn default() -> Self {
        Self {
            metric_pairs: 500,
            gradient_instances: 20,
            loss_runs: 20,
            blob_seeds: 20,
            tiny_hdbscan: 200,
            split_instances: 1000,
            vlad_frames: 200,
            kmeans_instances: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Section {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub failures: usize,
    pub reports: Vec<OracleReport>,
}

impl Section {
    fn new(name: &str, reports: Vec<OracleReport>) -> Self {
        let failures = reports.iter().filter(|r| !r.passed).count();
        Self {
            name: name.to_string(),
            passed: failures == 0 && !reports.is_empty(),
            cases: reports.len(),
            failures,
            reports,
        }
    }

    /// The report with the largest absolute error.
    pub fn worst(&self) -> Option<&OracleReport> {
        self.reports.iter().max_by(|a, b| a.abs_error.total_cmp(&b.abs_error))
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// AMI and EMI against exhaustive permutation enumeration, and the
/// V-measure family against the direct entropy formulas.
pub fn metric_oracles(pairs: usize, seed: u64) -> Result<Section, CliError> {
    let mut rng = rng_for(seed, 10);
    let mut reports = Vec::with_capacity(pairs * 3);
    for case in 0..pairs {
        let (t, p) = random_labeling_pair(&mut rng, 8, 4);
        let table = contingency(&t, &p, NoisePolicy::SingleCluster)?;
        reports.push(OracleReport::absolute(format!("ami/{case}"), oracle_ami(&t, &p)?, ami(&table), 1e-10));
        reports.push(OracleReport::absolute(
            format!("emi/{case}"),
            oracle_emi(&table)?,
            expected_mutual_information(&table),
            1e-10,
        ));
        let (h, c, v) = oracle_v_measure(&t, &p);
        let got = v_measure(&table);
        let worst = [(h, got.homogeneity), (c, got.completeness), (v, got.v_measure)]
            .into_iter()
            .max_by(|a, b| (a.0 - a.1).abs().total_cmp(&(b.0 - b.1).abs()))
            .expect("three entries");
        reports.push(OracleReport::absolute(format!("v-measure/{case}"), worst.0, worst.1, 1e-12));
    }
    Ok(Section::new("metrics-oracle", reports))
}

/// true [0,0,1,1] against pred [0,0,0,1]: V-measure 0.3437 by hand.
pub fn metric_worked_example() -> Result<Section, CliError> {
    let table = contingency(&[0, 0, 1, 1], &[0, 0, 0, 1], NoisePolicy::SingleCluster)?;
    let v = v_measure(&table).v_measure;
    Ok(Section::new(
        "metrics-worked-example",
        vec![OracleReport::absolute("v-measure/worked", 0.3437, v, 5e-5)],
    ))
}

/// Analytic PaCMAP gradients against central differences on random
/// 10-point instances, across all three weight phases.
pub fn pacmap_gradient(instances: usize, seed: u64) -> Result<Section, CliError> {
    let mut rng = rng_for(seed, 20);
    let config = PacmapConfig {
        dim: 2,
        n_neighbors: 3,
        ..PacmapConfig::default()
    };
    let checkpoints = [0, 60, 99, 150, 300, 449];
    let mut reports = Vec::with_capacity(instances);
    for case in 0..instances {
        let x = normal_matrix(&mut rng, 10, 5, 1.0);
        let cfg = PacmapConfig {
            seed: rng.random(),
            ..config.clone()
        };
        let neighbors = build_knn_pairs(&x, &cfg)?;
        let pairs = sample_pairs(&x, &neighbors, &cfg)?;
        let y = normal_matrix(&mut rng, 10, 2, 1.0);
        let weights = phase_weights(checkpoints[case % checkpoints.len()], cfg.iters);
        let (_, analytic) = loss_and_gradient(&y, &pairs, weights);
        let numeric = oracle_finite_diff(|m| pacmap_loss(m, &pairs, weights), &y, 1e-5);
        let (fd, an) = analytic
            .as_slice()
            .iter()
            .zip(numeric.as_slice())
            .filter(|(a, _)| a.abs() > 1e-8)
            .map(|(&a, &n)| (n, a))
            .max_by(|a, b| relative_error(a.0, a.1).total_cmp(&relative_error(b.0, b.1)))
            .unwrap_or((0.0, 0.0));
        reports.push(OracleReport::relative(format!("gradient/{case}"), fd, an, 1e-4));
    }
    Ok(Section::new("pacmap-gradient", reports))
}

/// `n_per` points around each of two centers `gap` apart on the first axis.
pub fn two_blobs(rng: &mut impl Rng, n_per: usize, dim: usize, gap: f64) -> Matrix {
    let mut x = normal_matrix(rng, 2 * n_per, dim, 1.0);
    for i in n_per..2 * n_per {
        x.set(i, 0, x.get(i, 0) + gap);
    }
    x
}

/// Final loss below initial loss on a 200-point two-blob dataset in at least
/// 19 of every 20 seeded runs.
pub fn pacmap_loss_decrease(runs: usize, seed: u64) -> Result<Section, CliError> {
    let mut rng = rng_for(seed, 30);
    let x = two_blobs(&mut rng, 100, 10, 10.0);
    let mut missed = Vec::new();
    for run in 0..runs {
        let cfg = PacmapConfig {
            seed: run as u64,
            ..PacmapConfig::default()
        };
        let fit = pacmap_fit_traced(&x, &cfg)?;
        if fit.final_loss >= fit.initial_loss {
            missed.push(run.to_string());
        }
    }
    let required = runs.saturating_sub(runs / 20);
    let decreased = runs - missed.len();
    let reports = vec![OracleReport::condition(
        format!("loss/decreased-runs/missed[{}]", missed.join(",")),
        required as f64,
        decreased as f64,
        decreased >= required,
    )];
    Ok(Section::new("pacmap-loss-decrease", reports))
}

/// Two 50-point 2-d Gaussian blobs 10 sigma apart, min_cluster_size 10:
/// exactly the two blobs, no noise.
pub fn hdbscan_blobs(seeds: usize, seed: u64) -> Result<Section, CliError> {
    let params = HdbscanParams::new(10);
    let mut reports = Vec::with_capacity(seeds);
    for run in 0..seeds {
        let mut rng = rng_for(seed.wrapping_add(run as u64), 40);
        let x = two_blobs(&mut rng, 50, 2, 10.0);
        let labeling = extract_clusters(&x, &params)?;
        let l = &labeling.labels;
        let recovered = labeling.n_clusters() == 2
            && labeling.noise_count() == 0
            && l[0] != l[50]
            && l[..50].iter().all(|&v| v == l[0])
            && l[50..].iter().all(|&v| v == l[50]);
        reports.push(OracleReport::condition(
            format!("blobs/{run}"),
            2.0,
            labeling.n_clusters() as f64,
            recovered,
        ));
    }
    Ok(Section::new("hdbscan-blobs", reports))
}

/// Agreement with the brute-force HDBSCAN on tiny random point sets: same
/// labels, same stabilities and the same minimum spanning tree weight.
pub fn hdbscan_tiny(cases: usize, seed: u64) -> Result<Section, CliError> {
    let mut rng = rng_for(seed, 50);
    let mut reports = Vec::with_capacity(cases);
    for case in 0..cases {
        let n = rng.random_range(2..=8usize);
        let dim = rng.random_range(1..=3usize);
        let x = random_clumped_points(&mut rng, n, dim);
        let params = HdbscanParams {
            min_cluster_size: 2,
            min_samples: Some(rng.random_range(1..n)),
        };
        let oracle = oracle_tiny_hdbscan_full(&x, &params)?;
        let labeling = extract_clusters(&x, &params)?;
        let core = core_distances(&x, params.min_samples())?;
        let weight: f64 = build_mst(&x, &core)?.iter().map(|e| e.weight).sum();
        let agree = labelings_agree(&labeling, &oracle.labeling, 1e-9);
        let weight_ok = relative_error(weight, oracle.mst_weight) <= 1e-9;
        reports.push(OracleReport::condition(
            format!("tiny/{case}/n{n}"),
            oracle.mst_weight,
            weight,
            agree && weight_ok,
        ));
    }
    Ok(Section::new("hdbscan-tiny", reports))
}

fn random_ratios(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let mut r = [0.0; 3];
        for v in &mut r {
            if rng.random_bool(0.8) {
                *v = rng.random_range(0.0..1.0);
            }
        }
        let sum: f64 = r.iter().sum();
        if sum > 1e-3 {
            let mut out = r.map(|v| v / sum);
            // exact unit sum: fold rounding into the largest entry
            let largest = (0..3).max_by(|&a, &b| out[a].total_cmp(&out[b])).expect("three");
            out[largest] = 1.0 - (0..3).filter(|&p| p != largest).map(|p| out[p]).sum::<f64>();
            return out;
        }
    }
}

/// Whole-group assignment and the per-partition deviation bound
/// `|fraction - ratio| <= largest group / N` on random instances.
pub fn splitter_bound(instances: usize, seed: u64) -> Result<Section, CliError> {
    let mut rng = rng_for(seed, 60);
    let mut reports = Vec::with_capacity(instances);
    for case in 0..instances {
        let n_groups = rng.random_range(1..=40usize);
        let max_size = *[1usize, 5, 20, 200].choose(&mut rng).expect("nonempty");
        let sizes: Vec<usize> = (0..n_groups).map(|_| rng.random_range(1..=max_size)).collect();
        let spec = SplitSpec::new(random_ratios(&mut rng))?;
        let groups: Vec<Group> = {
            let mut next = 0;
            sizes
                .iter()
                .enumerate()
                .map(|(id, &s)| {
                    let members = (next..next + s).collect();
                    next += s;
                    Group { id, members }
                })
                .collect()
        };
        let total: usize = sizes.iter().sum();
        let indexed: Vec<(usize, usize)> = sizes.iter().copied().enumerate().collect();
        let assignment = assign_clusters(&indexed, &spec)?;
        let parts = assignment.frame_partitions(&groups, total)?;
        let whole = groups
            .iter()
            .all(|g| g.members.iter().all(|&m| parts[m] == parts[g.members[0]]));
        let mut counts = [0usize; 3];
        for p in &parts {
            counts[p.index()] += 1;
        }
        let deviation = (0..3)
            .map(|p| (counts[p] as f64 / total as f64 - spec.ratios[p]).abs())
            .fold(0.0, f64::max);
        let bound = *sizes.iter().max().expect("nonempty") as f64 / total as f64;
        reports.push(OracleReport::condition(
            format!("split/{case}"),
            bound,
            deviation,
            whole && counts == assignment.counts && deviation <= bound + 1e-12,
        ));
    }
    Ok(Section::new("splitter-bound", reports))
}

fn video_manifest(videos: usize, frames: usize) -> CorpusManifest {
    CorpusManifest::new(
        (0..videos * frames)
            .map(|i| FrameRecord {
                frame_id: format!("v{:03}_f{:02}", i / frames, i % frames),
                video_id: format!("v{:03}", i / frames),
                frame_index: (i % frames) as u64,
                path: None,
                row: Some(i as u64),
            })
            .collect(),
    )
}

/// Per-frame random splitting leaks nearly every video; splitting a
/// perfect clustering by whole clusters leaks none.
pub fn splitter_leakage_contrast(seed: u64) -> Result<Section, CliError> {
    let manifest = video_manifest(100, 10);
    let spec = SplitSpec {
        seed,
        ..SplitSpec::default()
    };
    let random = random_frame_split(manifest.len(), &spec)?;
    let random_rate = leakage_report(&partition_map(&manifest, &random)?, &manifest)?.leakage_rate;

    let labels: Vec<i64> = (0..manifest.len()).map(|i| (i / 10) as i64).collect();
    let groups = group_noise(&labels, &manifest, NoiseGrouping::ByVideo)?;
    let sizes: Vec<(usize, usize)> = groups.iter().map(|g| (g.id, g.members.len())).collect();
    let parts: Vec<Partition> = assign_clusters(&sizes, &spec)?.frame_partitions(&groups, manifest.len())?;
    let cluster_rate = leakage_report(&partition_map(&manifest, &parts)?, &manifest)?.leakage_rate;

    Ok(Section::new(
        "splitter-leakage-contrast",
        vec![
            OracleReport::condition("leakage/random-frames", 0.9, random_rate, random_rate > 0.9),
            OracleReport::absolute("leakage/perfect-clusters", 0.0, cluster_rate, 0.0),
        ],
    ))
}

/// VLAD vectors are unit length (zero for empty frames) and do not depend
/// on descriptor order.
pub fn vlad_properties(frames: usize, seed: u64) -> Result<Section, CliError> {
    let mut rng = rng_for(seed, 70);
    let (k, p) = (8, 16);
    let codebook = Codebook::new(normal_matrix(&mut rng, k, p, 3.0))?;
    let mut reports = Vec::with_capacity(2 * frames);
    for case in 0..frames {
        let m = if case % 10 == 0 { 0 } else { rng.random_range(1..=60usize) };
        let descriptors = normal_matrix(&mut rng, m, p, 3.0);
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let frame = LocalDescriptorSet {
            frame_id: format!("f{case}"),
            descriptors: if m == 0 { Matrix::zeros(0, p) } else { descriptors.clone() },
        };
        let shuffled = LocalDescriptorSet {
            frame_id: frame.frame_id.clone(),
            descriptors: if m == 0 { Matrix::zeros(0, p) } else { descriptors.select_rows(&order) },
        };
        let a = vlad_encode(&frame, &codebook)?.values;
        let b = vlad_encode(&shuffled, &codebook)?.values;
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        reports.push(OracleReport::absolute(format!("vlad-permutation/{case}"), 0.0, diff, 1e-12));
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let expected = if m == 0 { 0.0 } else { 1.0 };
        reports.push(OracleReport::absolute(format!("vlad-norm/{case}/m{m}"), expected, norm, 1e-12));
    }
    Ok(Section::new("vlad-encoding", reports))
}

/// Lloyd iterations never increase inertia.
pub fn kmeans_monotone(instances: usize, seed: u64) -> Result<Section, CliError> {
    let mut rng = rng_for(seed, 80);
    let mut reports = Vec::with_capacity(instances);
    for case in 0..instances {
        let n = rng.random_range(30..=300usize);
        let dim = rng.random_range(1..=8usize);
        let k = rng.random_range(2..=12usize);
        let x = random_clumped_points(&mut rng, n, dim);
        let trace = train_codebook_traced(&x, k, rng.random())?.inertia;
        let worst_rise = trace
            .windows(2)
            .map(|w| (w[1] - w[0]) / w[0].max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0);
        reports.push(OracleReport::condition(
            format!("kmeans/{case}"),
            0.0,
            worst_rise,
            worst_rise <= 1e-12,
        ));
    }
    Ok(Section::new("kmeans-monotone", reports))
}

/// Every section, in a fixed order.
pub fn run_battery(size: &BatterySize, seed: u64) -> Result<Vec<Section>, CliError> {
    Ok(vec![
        metric_oracles(size.metric_pairs, seed)?,
        metric_worked_example()?,
        pacmap_gradient(size.gradient_instances, seed)?,
        pacmap_loss_decrease(size.loss_runs, seed)?,
        hdbscan_blobs(size.blob_seeds, seed)?,
        hdbscan_tiny(size.tiny_hdbscan, seed)?,
        splitter_bound(size.split_instances, seed)?,
        splitter_leakage_contrast(seed)?,
        vlad_properties(size.vlad_frames, seed)?,
        kmeans_monotone(size.kmeans_instances, seed)?,
    ])
}
