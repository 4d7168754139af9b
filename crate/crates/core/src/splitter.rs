//! Whole-group assignment to train/validation/test partitions and a
//! video-level leakage audit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{manifest_to_csv, CorpusManifest, FrameRecord};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("length mismatch: {labels} labels for {frames} frames")]
    LengthMismatch { labels: usize, frames: usize },
    #[error("nothing to split")]
    Empty,
    #[error("frame {0} has no partition")]
    MissingPartition(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Target train/val/test fractions. `seed` is accepted for forward
/// compatibility; the greedy assigner is deterministic and ignores it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [0.7, 0.15, 0.15],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3]) -> Result<Self, SplitError> {
        let s = Self { ratios, seed: 0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        if self.ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(SplitError::InvalidRatios(format!("{:?} has a negative or non-finite entry", self.ratios)));
        }
        if self.ratios.iter().all(|&r| r == 0.0) {
            return Err(SplitError::InvalidRatios("all ratios are 0".into()));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplitError::InvalidRatios(format!("{:?} sums to {sum}, not 1", self.ratios)));
        }
        Ok(())
    }
}

/// How noise frames are grouped before assignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseGrouping {
    /// One pseudo-cluster per source video; frames without a video id stay
    /// singletons.
    #[default]
    ByVideo,
    /// Every noise frame is its own group.
    Singletons,
}

/// A set of frames (manifest indices) that must share a partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub id: usize,
    pub members: Vec<usize>,
}

/// Clusters become groups `0..C`; noise frames are gathered into
/// pseudo-clusters numbered from `C` on.
pub fn group_noise(
    labels: &[i64],
    manifest: &CorpusManifest,
    grouping: NoiseGrouping,
) -> Result<Vec<Group>, SplitError> {
    if labels.len() != manifest.len() {
        return Err(SplitError::LengthMismatch {
            labels: labels.len(),
            frames: manifest.len(),
        });
    }
    let clusters = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let mut groups: Vec<Group> = (0..clusters)
        .map(|id| Group {
            id,
            members: Vec::new(),
        })
        .collect();
    let mut by_video: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, (&l, r)) in labels.iter().zip(&manifest.records).enumerate() {
        if l >= 0 {
            groups[l as usize].members.push(i);
            continue;
        }
        let next = groups.len();
        let id = if grouping == NoiseGrouping::ByVideo && !r.video_id.is_empty() {
            *by_video.entry(r.video_id.as_str()).or_insert(next)
        } else {
            next
        };
        if id == next {
            groups.push(Group {
                id,
                members: Vec::new(),
            });
        }
        groups[id].members.push(i);
    }
    // cluster ids with no members (gaps in the labeling) carry nothing
    groups.retain(|g| !g.members.is_empty());
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub group_to_partition: BTreeMap<usize, Partition>,
    /// Frames per partition, train/val/test.
    pub counts: [usize; 3],
}

impl SplitAssignment {
    /// Partition of every frame, in manifest order.
    pub fn frame_partitions(&self, groups: &[Group], n_frames: usize) -> Result<Vec<Partition>, SplitError> {
        let mut out = vec![None; n_frames];
        for g in groups {
            let p = self.group_to_partition[&g.id];
            for &m in &g.members {
                out[m] = Some(p);
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| SplitError::MissingPartition(format!("#{i}"))))
            .collect()
    }
}

/// Greedy largest-first assignment of whole groups.
///
/// Groups are taken by descending size (ties: smaller id). Each goes to the
/// partition with the largest relative deficit
/// `(target - assigned) / max(target, 1)` among those whose remaining
/// deficit can hold the whole group; if none can, among those with any
/// deficit left. Ties prefer train, then val, then test. Partitions with
/// ratio 0 receive nothing.
///
/// Every partition then ends within `largest group size / total` of its
/// target fraction.
pub fn assign_clusters(group_sizes: &[(usize, usize)], spec: &SplitSpec) -> Result<SplitAssignment, SplitError> {
    spec.validate()?;
    let total: usize = group_sizes.iter().map(|g| g.1).sum();
    if total == 0 {
        return Err(SplitError::Empty);
    }
    let targets: Vec<f64> = spec.ratios.iter().map(|r| r * total as f64).collect();
    let mut order = group_sizes.to_vec();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut counts = [0usize; 3];
    let mut group_to_partition = BTreeMap::new();
    for (id, size) in order {
        let deficit = |p: usize| targets[p] - counts[p] as f64;
        let relative = |p: usize| deficit(p) / targets[p].max(1.0);
        let best = |pred: &dyn Fn(usize) -> bool| {
            (0..3)
                .filter(|&p| spec.ratios[p] > 0.0 && pred(p))
                .fold(None, |acc: Option<usize>, p| match acc {
                    Some(q) if relative(q) >= relative(p) => Some(q),
                    _ => Some(p),
                })
        };
        let p = best(&|p| deficit(p) >= size as f64)
            .or_else(|| best(&|p| deficit(p) > 0.0))
            .or_else(|| best(&|_| true))
            .expect("some ratio is positive");
        counts[p] += size;
        group_to_partition.insert(id, Partition::ALL[p]);
    }
    Ok(SplitAssignment {
        group_to_partition,
        counts,
    })
}

/// Per-frame random split: each frame draws its partition independently
/// with the target probabilities. Used as the leakage-prone baseline.
pub fn random_frame_split(n_frames: usize, spec: &SplitSpec) -> Result<Vec<Partition>, SplitError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..n_frames)
        .map(|_| {
            let u: f64 = rng.random();
            if u < spec.ratios[0] {
                Partition::Train
            } else if u < spec.ratios[0] + spec.ratios[1] {
                Partition::Val
            } else {
                Partition::Test
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub videos_total: usize,
    pub videos_leaking: usize,
    pub leakage_rate: f64,
    pub per_partition_counts: BTreeMap<String, usize>,
    /// Partitions occupied by each video.
    #[serde(skip)]
    pub per_video: BTreeMap<String, BTreeSet<Partition>>,
}

/// Counts videos whose frames occupy two or more partitions. Frames with an
/// empty video id are not attributed to any video.
pub fn leakage_report(
    frame_to_partition: &BTreeMap<String, Partition>,
    manifest: &CorpusManifest,
) -> Result<LeakageReport, SplitError> {
    let mut per_video: BTreeMap<String, BTreeSet<Partition>> = BTreeMap::new();
    let mut per_partition_counts: BTreeMap<String, usize> =
        Partition::ALL.iter().map(|p| (p.name().to_string(), 0)).collect();
    for r in &manifest.records {
        let &p = frame_to_partition
            .get(&r.frame_id)
            .ok_or_else(|| SplitError::MissingPartition(r.frame_id.clone()))?;
        *per_partition_counts.get_mut(p.name()).expect("all partitions present") += 1;
        if !r.video_id.is_empty() {
            per_video.entry(r.video_id.clone()).or_default().insert(p);
        }
    }
    let videos_total = per_video.len();
    let videos_leaking = per_video.values().filter(|s| s.len() >= 2).count();
    Ok(LeakageReport {
        videos_total,
        videos_leaking,
        leakage_rate: if videos_total == 0 {
            0.0
        } else {
            videos_leaking as f64 / videos_total as f64
        },
        per_partition_counts,
        per_video,
    })
}

/// Pairs manifest frame ids with an aligned partition list.
pub fn partition_map(manifest: &CorpusManifest, partitions: &[Partition]) -> Result<BTreeMap<String, Partition>, SplitError> {
    if partitions.len() != manifest.len() {
        return Err(SplitError::LengthMismatch {
            labels: partitions.len(),
            frames: manifest.len(),
        });
    }
    Ok(manifest
        .records
        .iter()
        .zip(partitions)
        .map(|(r, &p)| (r.frame_id.clone(), p))
        .collect())
}

/// Writes `train.csv`, `val.csv` and `test.csv` in manifest format with a
/// `partition` column. Rows keep manifest order; paths are copied verbatim.
pub fn emit_split(partitions: &[Partition], manifest: &CorpusManifest, out_dir: &Path) -> Result<(), SplitError> {
    if partitions.len() != manifest.len() {
        return Err(SplitError::LengthMismatch {
            labels: partitions.len(),
            frames: manifest.len(),
        });
    }
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| SplitError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    for part in Partition::ALL {
        let rows: Vec<&FrameRecord> = manifest
            .records
            .iter()
            .zip(partitions)
            .filter(|(_, &p)| p == part)
            .map(|(r, _)| r)
            .collect();
        let path = out_dir.join(format!("{}.csv", part.name()));
        fs::write(&path, manifest_to_csv(&rows, Some(part.name()))).map_err(io(&path))?;
    }
    Ok(())
}
