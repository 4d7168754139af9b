//! Hierarchical density-based clustering (HDBSCAN) with excess-of-mass
//! cluster selection.
//!
//! The hierarchy is built from threshold components of the minimum spanning
//! tree over mutual-reachability distances: all tree edges of one weight are
//! cut together, so the result does not depend on which of several tied
//! spanning trees was found.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusManifest;
use crate::knn::knn_table;
use crate::matrix::{euclidean, Matrix};

/// Smallest distance used when converting to `lambda = 1 / distance`.
pub const MIN_DISTANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HdbscanError {
    #[error("invalid hdbscan parameters: {0}")]
    InvalidParams(String),
    #[error("min_samples = {min_samples} must be below the number of points {points}")]
    MinSamplesTooLarge { min_samples: usize, points: usize },
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite coordinate at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("length mismatch: {labels} labels for {frames} frames")]
    LengthMismatch { labels: usize, frames: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("labeling file {path}: {msg}")]
    Parse { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    /// Defaults to `min_cluster_size`.
    pub min_samples: Option<usize>,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self::new(10)
    }
}

impl HdbscanParams {
    pub fn new(min_cluster_size: usize) -> Self {
        Self {
            min_cluster_size,
            min_samples: None,
        }
    }

    pub fn min_samples(&self) -> usize {
        self.min_samples.unwrap_or(self.min_cluster_size)
    }

    pub fn validate(&self) -> Result<(), HdbscanError> {
        if self.min_cluster_size < 2 {
            return Err(HdbscanError::InvalidParams("min_cluster_size must be at least 2".into()));
        }
        if self.min_samples == Some(0) {
            return Err(HdbscanError::InvalidParams("min_samples must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_finite(y: &Matrix) -> Result<(), HdbscanError> {
    match y.first_non_finite() {
        Some((row, col)) => Err(HdbscanError::NonFinite { row, col }),
        None => Ok(()),
    }
}

/// Distance from each point to its `min_samples`-th nearest other point.
pub fn core_distances(y: &Matrix, min_samples: usize) -> Result<Vec<f64>, HdbscanError> {
    if min_samples == 0 {
        return Err(HdbscanError::InvalidParams("min_samples must be at least 1".into()));
    }
    if min_samples >= y.rows() {
        return Err(HdbscanError::MinSamplesTooLarge {
            min_samples,
            points: y.rows(),
        });
    }
    check_finite(y)?;
    Ok(knn_table(y, min_samples)
        .into_iter()
        .map(|nb| nb.distances[min_samples - 1])
        .collect())
}

pub fn mutual_reachability(distance: f64, core_a: f64, core_b: f64) -> f64 {
    distance.max(core_a).max(core_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Minimum spanning tree of the complete mutual-reachability graph by dense
/// Prim, starting at point 0. Ties go to the lower vertex index.
pub fn build_mst(y: &Matrix, core: &[f64]) -> Result<Vec<MstEdge>, HdbscanError> {
    let n = y.rows();
    if n < 2 {
        return Err(HdbscanError::TooFewPoints(n));
    }
    if core.len() != n {
        return Err(HdbscanError::LengthMismatch {
            labels: core.len(),
            frames: n,
        });
    }
    check_finite(y)?;
    let mut in_tree = vec![false; n];
    let mut best: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let yc = y.row(current);
        let cc = core[current];
        best.par_iter_mut().enumerate().for_each(|(v, slot)| {
            if !in_tree[v] {
                let w = mutual_reachability(euclidean(yc, y.row(v)), cc, core[v]);
                if w < slot.0 {
                    *slot = (w, current);
                }
            }
        });
        let mut next = usize::MAX;
        for v in 0..n {
            if !in_tree[v] && (next == usize::MAX || best[v].0 < best[next].0) {
                next = v;
            }
        }
        edges.push(MstEdge {
            a: best[next].1,
            b: next,
            weight: best[next].0,
        });
        in_tree[next] = true;
        current = next;
    }
    Ok(edges)
}

/// One edge of the condensed tree. Ids below `n_points` are points; the
/// root cluster is `n_points` and later clusters count up from there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondensedEdge {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub child_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensedTree {
    pub n_points: usize,
    pub edges: Vec<CondensedEdge>,
}

impl CondensedTree {
    pub fn root(&self) -> usize {
        self.n_points
    }

    pub fn n_clusters(&self) -> usize {
        1 + self.edges.iter().filter(|e| e.child >= self.n_points).count()
    }

    /// Birth lambda of every cluster, indexed by `id - n_points`.
    fn births(&self) -> Vec<f64> {
        let mut births = vec![0.0; self.n_clusters()];
        for e in self.edges.iter().filter(|e| e.child >= self.n_points) {
            births[e.child - self.n_points] = e.lambda;
        }
        births
    }

    /// `sum (lambda_exit - lambda_birth)` over the points of each cluster.
    pub fn stabilities(&self) -> Vec<f64> {
        let births = self.births();
        let mut out = vec![0.0; births.len()];
        for e in &self.edges {
            let p = e.parent - self.n_points;
            out[p] += (e.lambda - births[p]) * e.child_size as f64;
        }
        out
    }
}

fn to_lambda(weight: f64) -> f64 {
    1.0 / weight.max(MIN_DISTANCE)
}

/// Component tree from merging MST edges in ascending weight groups.
struct LevelTree {
    /// Children of node `id - n`; nodes below `n` are points.
    children: Vec<Vec<usize>>,
    weight: Vec<f64>,
    size: Vec<usize>,
    /// One member point per node.
    rep: Vec<usize>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn level_tree(mst: &[MstEdge], n: usize) -> LevelTree {
    let mut sorted = mst.to_vec();
    sorted.sort_by(|a, b| a.weight.total_cmp(&b.weight).then((a.a, a.b).cmp(&(b.a, b.b))));
    let mut uf: Vec<usize> = (0..n).collect();
    // union-find root -> current tree node
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut tree = LevelTree {
        children: Vec::new(),
        weight: Vec::new(),
        size: Vec::new(),
        rep: Vec::new(),
    };
    let node_size = |t: &LevelTree, id: usize| if id < n { 1 } else { t.size[id - n] };
    let mut start = 0;
    while start < sorted.len() {
        let w = sorted[start].weight;
        let end = start + sorted[start..].iter().take_while(|e| e.weight == w).count();
        let mut merged: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut touched = Vec::new();
        for e in &sorted[start..end] {
            touched.push(node_of[find(&mut uf, e.a)]);
            touched.push(node_of[find(&mut uf, e.b)]);
            let (ra, rb) = (find(&mut uf, e.a), find(&mut uf, e.b));
            uf[ra.max(rb)] = ra.min(rb);
        }
        touched.sort_unstable();
        touched.dedup();
        for node in touched {
            let probe = if node < n { node } else { tree.rep[node - n] };
            merged.entry(find(&mut uf, probe)).or_default().push(node);
        }
        for (root, kids) in merged {
            let size = kids.iter().map(|&k| node_size(&tree, k)).sum();
            tree.rep.push(if kids[0] < n { kids[0] } else { tree.rep[kids[0] - n] });
            tree.children.push(kids);
            tree.weight.push(w);
            tree.size.push(size);
            node_of[root] = n + tree.children.len() - 1;
        }
        start = end;
    }
    tree
}

fn collect_points(tree: &LevelTree, n: usize, node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if x < n {
            out.push(x);
        } else {
            stack.extend(tree.children[x - n].iter().rev());
        }
    }
}

/// Condenses the MST hierarchy: a level that leaves two or more components
/// of at least `min_cluster_size` points creates child clusters; smaller
/// pieces fall out of their cluster at that level's lambda.
pub fn condense_tree(mst: &[MstEdge], n_points: usize, min_cluster_size: usize) -> CondensedTree {
    let n = n_points;
    let mut edges = Vec::new();
    if n < 2 {
        for p in 0..n {
            edges.push(CondensedEdge {
                parent: n,
                child: p,
                lambda: to_lambda(0.0),
                child_size: 1,
            });
        }
        return CondensedTree { n_points, edges };
    }
    let tree = level_tree(mst, n);
    let top = n + tree.children.len() - 1;
    let mut next_cluster = n + 1;
    // (level-tree node, cluster it currently represents), depth first
    let mut stack = vec![(top, n)];
    let mut fall = Vec::new();
    while let Some((node, cluster)) = stack.pop() {
        let lambda = to_lambda(tree.weight[node - n]);
        let kids = &tree.children[node - n];
        let size_of = |k: usize| if k < n { 1 } else { tree.size[k - n] };
        let big: Vec<usize> = kids.iter().copied().filter(|&k| size_of(k) >= min_cluster_size).collect();
        for &k in kids.iter().filter(|&&k| size_of(k) < min_cluster_size) {
            fall.clear();
            collect_points(&tree, n, k, &mut fall);
            fall.sort_unstable();
            edges.extend(fall.iter().map(|&p| CondensedEdge {
                parent: cluster,
                child: p,
                lambda,
                child_size: 1,
            }));
        }
        match big.len() {
            0 => {}
            1 => stack.push((big[0], cluster)),
            _ => {
                let mut born = Vec::new();
                for &k in &big {
                    edges.push(CondensedEdge {
                        parent: cluster,
                        child: next_cluster,
                        lambda,
                        child_size: tree.size[k - n],
                    });
                    born.push((k, next_cluster));
                    next_cluster += 1;
                }
                stack.extend(born.into_iter().rev());
            }
        }
    }
    CondensedTree { n_points, edges }
}

/// Excess-of-mass selection. A cluster is kept iff its stability strictly
/// exceeds the summed value of its selected descendants; the root is never
/// kept. Returns selected cluster ids in ascending order.
pub fn select_clusters(tree: &CondensedTree) -> Vec<usize> {
    let n = tree.n_points;
    let count = tree.n_clusters();
    let stability = tree.stabilities();
    let mut child_clusters = vec![Vec::new(); count];
    for e in tree.edges.iter().filter(|e| e.child >= n) {
        child_clusters[e.parent - n].push(e.child - n);
    }
    let mut selected = vec![false; count];
    let mut value = vec![0.0; count];
    // children always carry larger ids than their parent
    for c in (1..count).rev() {
        let below: f64 = child_clusters[c].iter().map(|&k| value[k]).sum();
        if stability[c] > below {
            selected[c] = true;
            value[c] = stability[c];
            let mut stack = child_clusters[c].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(&child_clusters[k]);
            }
        } else {
            value[c] = below;
        }
    }
    (1..count).filter(|&c| selected[c]).map(|c| c + n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    /// Cluster per point, `-1` for noise.
    pub labels: Vec<i64>,
    /// Stability per cluster label.
    pub stabilities: Vec<f64>,
}

impl ClusterLabeling {
    pub fn n_clusters(&self) -> usize {
        self.stabilities.len()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l < 0).count()
    }

    /// Stability of the point's cluster, 0 for noise.
    pub fn point_stability(&self, i: usize) -> f64 {
        usize::try_from(self.labels[i]).map_or(0.0, |c| self.stabilities[c])
    }

    pub fn all_noise(n: usize) -> Self {
        Self {
            labels: vec![-1; n],
            stabilities: Vec::new(),
        }
    }
}

/// Labels from a condensed tree and a selection: clusters numbered by
/// descending size, then smallest member index.
pub fn label_points(tree: &CondensedTree, selected: &[usize]) -> ClusterLabeling {
    let n = tree.n_points;
    let stability = tree.stabilities();
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); tree.n_clusters()];
    for e in &tree.edges {
        children[e.parent - n].push((e.child, e.child_size));
    }
    let mut groups: Vec<(Vec<usize>, f64)> = selected
        .iter()
        .map(|&c| {
            let mut members = Vec::new();
            let mut stack = vec![c];
            while let Some(x) = stack.pop() {
                for &(child, _) in &children[x - n] {
                    if child < n {
                        members.push(child);
                    } else {
                        stack.push(child);
                    }
                }
            }
            members.sort_unstable();
            (members, stability[c - n])
        })
        .collect();
    groups.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0[0].cmp(&b.0[0])));
    let mut labels = vec![-1; n];
    for (label, (members, _)) in groups.iter().enumerate() {
        for &p in members {
            labels[p] = label as i64;
        }
    }
    ClusterLabeling {
        labels,
        stabilities: groups.into_iter().map(|g| g.1).collect(),
    }
}

/// Full pipeline returning the condensed tree alongside the labels.
pub fn extract_clusters_with_tree(
    y: &Matrix,
    params: &HdbscanParams,
) -> Result<(ClusterLabeling, CondensedTree), HdbscanError> {
    params.validate()?;
    check_finite(y)?;
    let n = y.rows();
    if n < 2 {
        return Ok((ClusterLabeling::all_noise(n), condense_tree(&[], n, params.min_cluster_size)));
    }
    let core = core_distances(y, params.min_samples().min(n - 1))?;
    let mst = build_mst(y, &core)?;
    let tree = condense_tree(&mst, n, params.min_cluster_size);
    let selected = select_clusters(&tree);
    Ok((label_points(&tree, &selected), tree))
}

pub fn extract_clusters(y: &Matrix, params: &HdbscanParams) -> Result<ClusterLabeling, HdbscanError> {
    extract_clusters_with_tree(y, params).map(|r| r.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster_id: i64,
    pub size: usize,
    pub video_ids: Vec<String>,
    pub dominant_video: String,
    pub dominant_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub clusters: Vec<ClusterReport>,
    /// Number of distinct clusters each video's frames landed in (noise
    /// excluded).
    pub video_spans: BTreeMap<String, usize>,
    pub noise_frames: usize,
}

pub fn cluster_summary(
    labeling: &ClusterLabeling,
    manifest: &CorpusManifest,
) -> Result<ClusterSummary, HdbscanError> {
    if labeling.labels.len() != manifest.len() {
        return Err(HdbscanError::LengthMismatch {
            labels: labeling.labels.len(),
            frames: manifest.len(),
        });
    }
    let mut per_cluster: BTreeMap<i64, BTreeMap<&str, usize>> = BTreeMap::new();
    let mut spans: BTreeMap<String, std::collections::BTreeSet<i64>> = BTreeMap::new();
    for (r, &l) in manifest.records.iter().zip(&labeling.labels) {
        let set = spans.entry(r.video_id.clone()).or_default();
        if l >= 0 {
            set.insert(l);
            *per_cluster.entry(l).or_default().entry(r.video_id.as_str()).or_default() += 1;
        }
    }
    let clusters = per_cluster
        .into_iter()
        .map(|(cluster_id, videos)| {
            let size: usize = videos.values().sum();
            let (dominant, count) = videos
                .iter()
                .fold(("", 0), |best, (v, &c)| if c > best.1 { (v, c) } else { best });
            ClusterReport {
                cluster_id,
                size,
                video_ids: videos.keys().map(|v| v.to_string()).collect(),
                dominant_video: dominant.to_string(),
                dominant_fraction: count as f64 / size as f64,
            }
        })
        .collect();
    Ok(ClusterSummary {
        clusters,
        video_spans: spans.into_iter().map(|(v, s)| (v, s.len())).collect(),
        noise_frames: labeling.noise_count(),
    })
}

/// Labeling CSV: `frame_id,cluster_id,stability`.
pub fn labeling_to_csv(frame_ids: &[String], labeling: &ClusterLabeling) -> String {
    let mut out = String::from("frame_id,cluster_id,stability\n");
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for (i, id) in frame_ids.iter().enumerate() {
        w.write_record([
            id.as_str(),
            &labeling.labels[i].to_string(),
            &format!("{:?}", labeling.point_stability(i)),
        ])
        .expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"));
    out
}

pub fn write_labeling(
    path: &Path,
    frame_ids: &[String],
    labeling: &ClusterLabeling,
) -> Result<(), HdbscanError> {
    if frame_ids.len() != labeling.labels.len() {
        return Err(HdbscanError::LengthMismatch {
            labels: labeling.labels.len(),
            frames: frame_ids.len(),
        });
    }
    fs::write(path, labeling_to_csv(frame_ids, labeling)).map_err(|source| HdbscanError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Rows of a labeling file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelingRow {
    pub frame_id: String,
    pub cluster_id: i64,
    pub stability: f64,
}

pub fn read_labeling(path: &Path) -> Result<Vec<LabelingRow>, HdbscanError> {
    let text = fs::read_to_string(path).map_err(|source| HdbscanError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let parse_err = |msg: String| HdbscanError::Parse {
        path: path.display().to_string(),
        msg,
    };
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(format!("missing column {name}")))
    };
    let (fi, ci, si) = (col("frame_id")?, col("cluster_id")?, col("stability")?);
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        rows.push(LabelingRow {
            frame_id: field(fi).to_string(),
            cluster_id: field(ci)
                .parse()
                .map_err(|_| parse_err(format!("line {}: bad cluster_id", line + 2)))?,
            stability: field(si)
                .parse()
                .map_err(|_| parse_err(format!("line {}: bad stability", line + 2)))?,
        });
    }
    Ok(rows)
}
