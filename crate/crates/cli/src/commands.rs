//! The pipeline stages. Every stage reads files, writes files, and returns a
//! report that is also written next to its main output as `<file>.json`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use framesplit::corpus::{generate_synthetic_corpus, load_images, load_manifest, write_manifest, CorpusManifest};
use framesplit::descriptors::{compute_hog, ingest_global_embeddings, ingest_local_descriptors, HogParams};
use framesplit::hdbscan::{
    cluster_summary, extract_clusters_with_tree, read_labeling, write_labeling, ClusterSummary, HdbscanParams,
};
use framesplit::matrix::{read_emb, write_emb};
use framesplit::metrics::{score, AmiNorm, ClusteringScores, NoisePolicy, NOISE};
use framesplit::pacmap::{pacmap_fit_traced, PacmapConfig};
use framesplit::splitter::{
    assign_clusters, emit_split, group_noise, leakage_report, partition_map, LeakageReport, NoiseGrouping, SplitSpec,
};
use framesplit::vlad::{
    pca_fit, pca_project, pool_descriptors, save_codebook, save_pca, train_codebook, vlad_encode_all, VladError,
    MAX_CODEBOOK_SAMPLES,
};
use framesplit::Matrix;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{EvaluateSection, FeatureSource, PipelineConfig, SplitSection};
use crate::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `<path>.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Json {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub manifest: PathBuf,
    pub videos: usize,
    pub frames_per_video: usize,
    pub frames: usize,
    pub side: usize,
    pub seed: u64,
}

impl fmt::Display for SynthReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "wrote {} frames ({} videos x {}, {}px) and {}",
            self.frames,
            self.videos,
            self.frames_per_video,
            self.side,
            self.manifest.display()
        )
    }
}

pub fn cmd_synth(out_dir: &Path, videos: usize, frames_per_video: usize, side: usize, seed: u64) -> Result<SynthReport, CliError> {
    let manifest = generate_synthetic_corpus(videos, frames_per_video, side, seed, out_dir)?;
    Ok(SynthReport {
        manifest: out_dir.join("manifest.csv"),
        videos,
        frames_per_video,
        frames: manifest.len(),
        side,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesReport {
    pub source: String,
    pub frames: usize,
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hog_side: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codebook_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pca_dim: Option<usize>,
    pub frame_ids_sha256: String,
    /// File names of models written beside the feature matrix.
    pub models: Vec<String>,
    pub warnings: Vec<String>,
}

impl fmt::Display for FeaturesReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} features: {} x {}", self.source, self.frames, self.dim)?;
        for w in &self.warnings {
            write!(f, "\nwarning: {w}")?;
        }
        Ok(())
    }
}

fn frame_ids_digest(manifest: &CorpusManifest) -> String {
    let mut h = Sha256::new();
    for r in &manifest.records {
        h.update(r.frame_id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn warn(warnings: &mut Vec<String>, msg: String) {
    log::warn!("{msg}");
    warnings.push(msg);
}

/// VLAD-encodes local descriptors and reduces them with PCA. The PCA target
/// shrinks to what the data supports; vectors already at or below the
/// target pass through unchanged.
fn local_features(
    path: &Path,
    manifest: &CorpusManifest,
    codebook_size: usize,
    pca_dim: usize,
    seed: u64,
    out: &Path,
    report: &mut FeaturesReport,
) -> Result<Matrix, CliError> {
    let sets = ingest_local_descriptors(path, manifest)?;
    let sample = pool_descriptors(&sets, MAX_CODEBOOK_SAMPLES, seed);
    let codebook = train_codebook(&sample, codebook_size, seed)?;
    let codebook_path = with_suffix(out, ".codebook.emb");
    save_codebook(&codebook_path, &codebook)?;
    report.models.push(file_name(&codebook_path));
    let vlad = vlad_encode_all(&sets, &codebook)?;
    report.codebook_size = Some(codebook_size);
    if vlad.cols() <= pca_dim {
        report.pca_dim = None;
        return Ok(vlad);
    }
    let mut target = pca_dim.min(vlad.rows().saturating_sub(1));
    if target < pca_dim {
        warn(
            &mut report.warnings,
            format!("pca dim {pca_dim} exceeds N-1 for {} frames; using {target}", vlad.rows()),
        );
    }
    if target == 0 {
        return Err(CliError::Config("PCA needs at least 2 frames".into()));
    }
    let model = match pca_fit(&vlad, target) {
        Ok(m) => m,
        Err(VladError::RankDeficient { rank, .. }) if rank > 0 => {
            warn(
                &mut report.warnings,
                format!("VLAD vectors have numerical rank {rank}; pca dim reduced from {target}"),
            );
            target = rank;
            pca_fit(&vlad, target)?
        }
        Err(e) => return Err(e.into()),
    };
    let pca_path = with_suffix(out, ".pca.emb");
    save_pca(&pca_path, &model, codebook_size)?;
    report.models.push(file_name(&pca_path));
    report.pca_dim = Some(target);
    Ok(pca_project(&model, &vlad)?)
}

pub fn cmd_features(
    manifest: &CorpusManifest,
    source: &FeatureSource,
    seed: u64,
    out: &Path,
) -> Result<FeaturesReport, CliError> {
    create_parent(out)?;
    let mut report = FeaturesReport {
        source: String::new(),
        frames: manifest.len(),
        dim: 0,
        hog_side: None,
        codebook_size: None,
        pca_dim: None,
        frame_ids_sha256: frame_ids_digest(manifest),
        models: Vec::new(),
        warnings: Vec::new(),
    };
    let values = match source {
        FeatureSource::Hog { side } => {
            report.source = "hog".into();
            report.hog_side = Some(*side);
            let params = HogParams::default();
            let images = load_images(manifest, *side)?;
            let rows = images
                .par_iter()
                .map(|img| compute_hog(img, &params))
                .collect::<Result<Vec<_>, _>>()?;
            Matrix::from_rows(&rows)?
        }
        FeatureSource::Local {
            path,
            codebook_size,
            pca_dim,
        } => {
            report.source = "local".into();
            local_features(path, manifest, *codebook_size, *pca_dim, seed, out, &mut report)?
        }
        FeatureSource::Global { path } => {
            report.source = "global".into();
            ingest_global_embeddings(path, manifest)?.values
        }
    };
    report.dim = values.cols();
    write_emb(out, &values)?;
    write_json(&sidecar_path(out), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceReport {
    pub frames: usize,
    pub input_dim: usize,
    pub dim: usize,
    pub pacmap: PacmapConfig,
    pub random_init: bool,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
}

impl fmt::Display for ReduceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "embedded {} x {} into {} dims; loss {:.6} -> {:.6}{}",
            self.frames,
            self.input_dim,
            self.dim,
            self.initial_loss,
            self.final_loss,
            if self.random_init { " (random init)" } else { "" }
        )
    }
}

pub fn cmd_reduce(features: &Path, config: &PacmapConfig, out: &Path) -> Result<ReduceReport, CliError> {
    let x = read_emb(features)?;
    create_parent(out)?;
    let fit = pacmap_fit_traced(&x, config)?;
    write_emb(out, &fit.embedding)?;
    let report = ReduceReport {
        frames: x.rows(),
        input_dim: x.cols(),
        dim: fit.embedding.cols(),
        pacmap: config.clone(),
        random_init: fit.random_init,
        initial_loss: fit.initial_loss,
        final_loss: fit.final_loss,
        loss_trace: fit.loss_trace,
    };
    write_json(&sidecar_path(out), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCommandReport {
    pub frames: usize,
    pub params: HdbscanParams,
    pub n_clusters: usize,
    pub noise_frames: usize,
    pub warnings: Vec<String>,
    pub summary: ClusterSummary,
}

impl fmt::Display for ClusterCommandReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} clusters over {} frames, {} noise",
            self.n_clusters, self.frames, self.noise_frames
        )?;
        for c in &self.summary.clusters {
            write!(
                f,
                "\n  cluster {:>4}: {:>6} frames, {:>4} videos, dominant {} ({:.0}%)",
                c.cluster_id,
                c.size,
                c.video_ids.len(),
                c.dominant_video,
                100.0 * c.dominant_fraction
            )?;
        }
        for w in &self.warnings {
            write!(f, "\nwarning: {w}")?;
        }
        Ok(())
    }
}

pub fn cmd_cluster(
    embedding: &Path,
    manifest: &CorpusManifest,
    params: &HdbscanParams,
    out: &Path,
    tree_json: Option<&Path>,
) -> Result<ClusterCommandReport, CliError> {
    let y = read_emb(embedding)?;
    if y.rows() != manifest.len() {
        return Err(CliError::Alignment(format!(
            "embedding has {} rows but the manifest has {} frames",
            y.rows(),
            manifest.len()
        )));
    }
    let mut warnings = Vec::new();
    if params.min_cluster_size > y.rows() {
        warn(
            &mut warnings,
            format!(
                "min_cluster_size {} exceeds the {} frames; every frame is noise",
                params.min_cluster_size,
                y.rows()
            ),
        );
    }
    let (labeling, tree) = extract_clusters_with_tree(&y, params)?;
    create_parent(out)?;
    write_labeling(out, &manifest.frame_ids(), &labeling)?;
    if let Some(path) = tree_json {
        create_parent(path)?;
        write_json(path, &tree_edges_json(&tree))?;
    }
    let report = ClusterCommandReport {
        frames: y.rows(),
        params: *params,
        n_clusters: labeling.n_clusters(),
        noise_frames: labeling.noise_count(),
        warnings,
        summary: cluster_summary(&labeling, manifest)?,
    };
    write_json(&sidecar_path(out), &report)?;
    Ok(report)
}

fn tree_edges_json(tree: &framesplit::hdbscan::CondensedTree) -> serde_json::Value {
    let edges: Vec<serde_json::Value> = tree
        .edges
        .iter()
        .map(|e| {
            serde_json::json!({
                "parent": e.parent,
                "child": e.child,
                "lambda": e.lambda,
                "child_size": e.child_size,
            })
        })
        .collect();
    serde_json::json!({ "n_points": tree.n_points, "root": tree.root(), "edges": edges })
}

/// Labels from a labeling file, reordered to manifest order. Every manifest
/// frame must appear exactly once and no other frame may appear.
pub fn load_aligned_labels(path: &Path, manifest: &CorpusManifest) -> Result<Vec<i64>, CliError> {
    let rows = read_labeling(path)?;
    let mut by_id: HashMap<&str, i64> = HashMap::with_capacity(rows.len());
    for r in &rows {
        if by_id.insert(r.frame_id.as_str(), r.cluster_id).is_some() {
            return Err(CliError::Alignment(format!(
                "{}: frame `{}` labeled twice",
                path.display(),
                r.frame_id
            )));
        }
        if r.cluster_id < NOISE {
            return Err(CliError::Alignment(format!(
                "{}: frame `{}` has invalid cluster id {}",
                path.display(),
                r.frame_id,
                r.cluster_id
            )));
        }
    }
    if rows.len() != manifest.len() {
        return Err(CliError::Alignment(format!(
            "{} has {} rows but the manifest has {} frames",
            path.display(),
            rows.len(),
            manifest.len()
        )));
    }
    manifest
        .records
        .iter()
        .map(|r| {
            by_id.get(r.frame_id.as_str()).copied().ok_or_else(|| {
                CliError::Alignment(format!("{}: no label for frame `{}`", path.display(), r.frame_id))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    #[serde(flatten)]
    pub leakage: LeakageReport,
    pub ratios: [f64; 3],
    pub achieved_fractions: [f64; 3],
    pub noise_grouping: NoiseGrouping,
    pub groups: usize,
    pub largest_group: usize,
}

impl fmt::Display for SplitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.leakage.per_partition_counts;
        let get = |k: &str| c.get(k).copied().unwrap_or(0);
        write!(
            f,
            "train {} / val {} / test {} frames ({:.3} / {:.3} / {:.3}) from {} groups\nleakage: {} of {} videos ({:.3})",
            get("train"),
            get("val"),
            get("test"),
            self.achieved_fractions[0],
            self.achieved_fractions[1],
            self.achieved_fractions[2],
            self.groups,
            self.leakage.videos_leaking,
            self.leakage.videos_total,
            self.leakage.leakage_rate
        )
    }
}

/// Writes `train.csv`, `val.csv`, `test.csv` and `leakage.json` to `out_dir`.
pub fn cmd_split(
    labeling: &Path,
    manifest: &CorpusManifest,
    split: &SplitSection,
    seed: u64,
    out_dir: &Path,
) -> Result<SplitReport, CliError> {
    let spec = SplitSpec {
        ratios: split.ratios,
        seed,
    };
    spec.validate()?;
    let labels = load_aligned_labels(labeling, manifest)?;
    let groups = group_noise(&labels, manifest, split.noise_grouping)?;
    let sizes: Vec<(usize, usize)> = groups.iter().map(|g| (g.id, g.members.len())).collect();
    let assignment = assign_clusters(&sizes, &spec)?;
    let parts = assignment.frame_partitions(&groups, manifest.len())?;
    emit_split(&parts, manifest, out_dir)?;
    let leakage = leakage_report(&partition_map(manifest, &parts)?, manifest)?;
    let total = manifest.len().max(1) as f64;
    let report = SplitReport {
        leakage,
        ratios: split.ratios,
        achieved_fractions: assignment.counts.map(|c| c as f64 / total),
        noise_grouping: split.noise_grouping,
        groups: groups.len(),
        largest_group: sizes.iter().map(|s| s.1).max().unwrap_or(0),
    };
    write_json(&out_dir.join("leakage.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub frames: usize,
    pub videos: usize,
    pub clusters: usize,
    pub noise_frames: usize,
    pub noise_policy: NoisePolicy,
    pub ami_norm: AmiNorm,
    #[serde(flatten)]
    pub scores: ClusteringScores,
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "V-measure {:.4}  AMI {:.4}  (homogeneity {:.4}, completeness {:.4})\n{} frames, {} videos, {} clusters, {} noise",
            self.scores.v_measure,
            self.scores.ami,
            self.scores.homogeneity,
            self.scores.completeness,
            self.frames,
            self.videos,
            self.clusters,
            self.noise_frames
        )
    }
}

/// Scores a labeling against the manifest's video ids.
pub fn cmd_evaluate(labeling: &Path, manifest: &CorpusManifest, eval: &EvaluateSection) -> Result<EvaluationReport, CliError> {
    let pred = load_aligned_labels(labeling, manifest)?;
    let truth = manifest.video_labels();
    let scores = score(&truth, &pred, eval.noise_policy, eval.ami_norm)?;
    let clusters = pred.iter().filter(|&&l| l >= 0).collect::<std::collections::BTreeSet<_>>().len();
    Ok(EvaluationReport {
        frames: pred.len(),
        videos: manifest.video_ids().len(),
        clusters,
        noise_frames: pred.iter().filter(|&&l| l == NOISE).count(),
        noise_policy: eval.noise_policy,
        ami_norm: eval.ami_norm,
        scores,
    })
}

/// Reads a `video_id,fps` CSV.
pub fn load_fps_table(path: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: usize, msg: &str| CliError::Config(format!("{}:{line}: {msg}", path.display()));
    let mut table = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("video_id")) {
            continue;
        }
        let (video, fps) = line.split_once(',').ok_or_else(|| bad(i + 1, "expected video_id,fps"))?;
        let fps: f64 = fps.trim().parse().map_err(|_| bad(i + 1, "fps is not a number"))?;
        table.insert(video.trim().to_string(), fps);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seconds: f64,
    /// Output path (relative to the run directory) to its SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub threads: usize,
    /// Input path to its SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub evaluation: EvaluationReport,
}

impl fmt::Display for RunManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.stages {
            writeln!(f, "{:<9} {:>8.2}s  {} outputs", s.stage, s.seconds, s.outputs.len())?;
        }
        write!(f, "{}", self.evaluation)
    }
}

struct StageTimer<'a> {
    run_dir: &'a Path,
    stages: Vec<StageRecord>,
}

impl StageTimer<'_> {
    fn run<T>(
        &mut self,
        stage: &str,
        body: impl FnOnce() -> Result<(T, Vec<PathBuf>), CliError>,
    ) -> Result<T, CliError> {
        log::info!("stage {stage}");
        let start = Instant::now();
        let (value, outputs) = body()?;
        let seconds = start.elapsed().as_secs_f64();
        let outputs = outputs
            .iter()
            .map(|p| Ok((relative_name(self.run_dir, p), sha256_file(p)?)))
            .collect::<Result<_, CliError>>()?;
        self.stages.push(StageRecord {
            stage: stage.to_string(),
            seconds,
            outputs,
        });
        Ok(value)
    }
}

fn relative_name(base: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(base).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Runs features, reduce, cluster, split and evaluate into `out_dir` and
/// writes `run.json`. The first failing stage aborts the run.
pub fn cmd_pipeline(
    manifest_path: &Path,
    config: &PipelineConfig,
    fps_table: Option<&Path>,
    out_dir: &Path,
) -> Result<RunManifest, CliError> {
    config.validate()?;
    let source = config.features.resolve()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut inputs = BTreeMap::new();
    inputs.insert(manifest_path.display().to_string(), sha256_file(manifest_path)?);
    match &source {
        FeatureSource::Local { path, .. } | FeatureSource::Global { path } => {
            inputs.insert(path.display().to_string(), sha256_file(path)?);
        }
        FeatureSource::Hog { .. } => {}
    }
    if let Some(p) = fps_table {
        inputs.insert(p.display().to_string(), sha256_file(p)?);
    }

    let mut timer = StageTimer {
        run_dir: out_dir,
        stages: Vec::new(),
    };
    let mut manifest = load_manifest(manifest_path)?;
    if let Some(p) = fps_table {
        manifest = timer.run("sample", || {
            let mut m = manifest.clone();
            m.fps_table = Some(load_fps_table(p)?);
            let mut sampled = m.subsample_one_fps()?;
            let resolved: Vec<Option<PathBuf>> = sampled
                .records
                .iter()
                .map(|r| sampled.resolve_path(r).map(|p| std::path::absolute(&p).unwrap_or(p)))
                .collect();
            for (r, p) in sampled.records.iter_mut().zip(resolved) {
                r.path = p;
            }
            let path = out_dir.join("manifest.csv");
            write_manifest(&path, &sampled)?;
            Ok((sampled, vec![path]))
        })?;
    }

    let features = out_dir.join("features.emb");
    timer.run("features", || {
        let report = cmd_features(&manifest, &source, config.seed, &features)?;
        let mut outs = vec![features.clone(), sidecar_path(&features)];
        for m in report.models {
            let m = out_dir.join(m);
            outs.push(sidecar_path(&m));
            outs.push(m);
        }
        Ok(((), outs))
    })?;

    let embedding = out_dir.join("embedding.emb");
    timer.run("reduce", || {
        cmd_reduce(&features, &config.pacmap_config(), &embedding)?;
        Ok(((), vec![embedding.clone(), sidecar_path(&embedding)]))
    })?;

    let labels = out_dir.join("labels.csv");
    timer.run("cluster", || {
        cmd_cluster(&embedding, &manifest, &config.hdbscan, &labels, None)?;
        Ok(((), vec![labels.clone(), sidecar_path(&labels)]))
    })?;

    let split_dir = out_dir.join("split");
    timer.run("split", || {
        cmd_split(&labels, &manifest, &config.split, config.seed, &split_dir)?;
        let outs = ["train.csv", "val.csv", "test.csv", "leakage.json"]
            .iter()
            .map(|f| split_dir.join(f))
            .collect();
        Ok(((), outs))
    })?;

    let evaluation_path = out_dir.join("evaluation.json");
    let evaluation = timer.run("evaluate", || {
        let report = cmd_evaluate(&labels, &manifest, &config.evaluate)?;
        write_json(&evaluation_path, &report)?;
        Ok((report, vec![evaluation_path.clone()]))
    })?;

    let run = RunManifest {
        config: config.clone(),
        threads: rayon::current_num_threads(),
        inputs,
        stages: timer.stages,
        evaluation,
    };
    write_json(&out_dir.join("run.json"), &run)?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use framesplit::corpus::FrameRecord;
    use framesplit::hdbscan::ClusterLabeling;

    fn manifest(videos: &[&str]) -> CorpusManifest {
        CorpusManifest::new(
            videos
                .iter()
                .enumerate()
                .map(|(i, v)| FrameRecord {
                    frame_id: format!("f{i}"),
                    video_id: v.to_string(),
                    frame_index: i as u64,
                    path: None,
                    row: Some(i as u64),
                })
                .collect(),
        )
    }

    fn write_labels(dir: &Path, m: &CorpusManifest, labels: Vec<i64>) -> PathBuf {
        let path = dir.join("labels.csv");
        let labeling = ClusterLabeling {
            stabilities: vec![1.0; labels.iter().max().map_or(0, |&m| (m + 1).max(0) as usize)],
            labels,
        };
        write_labeling(&path, &m.frame_ids(), &labeling).unwrap();
        path
    }

    #[test]
    fn labels_realign_to_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(&["a", "a", "b"]);
        let path = dir.path().join("l.csv");
        fs::write(&path, "frame_id,cluster_id,stability\nf2,1,0.5\nf0,0,1\nf1,-1,0\n").unwrap();
        assert_eq!(load_aligned_labels(&path, &m).unwrap(), vec![0, -1, 1]);
    }

    #[test]
    fn misaligned_labels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(&["a", "a", "b"]);
        let path = dir.path().join("l.csv");
        fs::write(&path, "frame_id,cluster_id,stability\nf0,0,1\nf1,0,1\n").unwrap();
        assert!(matches!(load_aligned_labels(&path, &m), Err(CliError::Alignment(_))));
        fs::write(&path, "frame_id,cluster_id,stability\nf0,0,1\nf1,0,1\nf9,0,1\n").unwrap();
        assert!(matches!(load_aligned_labels(&path, &m), Err(CliError::Alignment(_))));
        fs::write(&path, "frame_id,cluster_id,stability\nf0,0,1\nf0,0,1\nf2,0,1\n").unwrap();
        assert!(matches!(load_aligned_labels(&path, &m), Err(CliError::Alignment(_))));
    }

    #[test]
    fn evaluate_perfect_and_constant() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(&["a", "a", "b", "b", "c", "c"]);
        let perfect = write_labels(dir.path(), &m, vec![2, 2, 0, 0, 1, 1]);
        let r = cmd_evaluate(&perfect, &m, &EvaluateSection::default()).unwrap();
        assert!((r.scores.v_measure - 1.0).abs() < 1e-12 && (r.scores.ami - 1.0).abs() < 1e-12);
        let constant = write_labels(dir.path(), &m, vec![0; 6]);
        let r = cmd_evaluate(&constant, &m, &EvaluateSection::default()).unwrap();
        assert_eq!(r.scores.ami, 0.0);
    }

    #[test]
    fn split_of_perfect_clustering_has_no_leakage() {
        let dir = tempfile::tempdir().unwrap();
        let videos: Vec<String> = (0..40).map(|i| format!("v{}", i / 4)).collect();
        let refs: Vec<&str> = videos.iter().map(String::as_str).collect();
        let m = manifest(&refs);
        let labels = write_labels(dir.path(), &m, (0..40).map(|i| i / 4).collect());
        let r = cmd_split(&labels, &m, &SplitSection::default(), 0, &dir.path().join("split")).unwrap();
        assert_eq!(r.leakage.leakage_rate, 0.0);
        assert_eq!(r.leakage.videos_total, 10);
        let json: serde_json::Value = read_json(&dir.path().join("split/leakage.json")).unwrap();
        assert_eq!(json["leakage_rate"], 0.0);
    }

    #[test]
    fn noise_frames_grouped_by_video_stay_together() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(&["a", "a", "a", "b", "b", "b"]);
        let labels = write_labels(dir.path(), &m, vec![-1, -1, -1, -1, -1, -1]);
        let split = SplitSection {
            ratios: [0.5, 0.5, 0.0],
            noise_grouping: NoiseGrouping::ByVideo,
        };
        let r = cmd_split(&labels, &m, &split, 0, &dir.path().join("s")).unwrap();
        assert_eq!(r.groups, 2);
        assert_eq!(r.leakage.videos_leaking, 0);
    }

    #[test]
    fn fps_table_parses_with_or_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fps.csv");
        fs::write(&path, "video_id,fps\nv0,25\nv1, 29.97\n").unwrap();
        let t = load_fps_table(&path).unwrap();
        assert_eq!(t["v0"], 25.0);
        assert_eq!(t["v1"], 29.97);
        fs::write(&path, "v0,abc\n").unwrap();
        assert!(load_fps_table(&path).is_err());
    }

    #[test]
    fn relative_names_use_forward_slashes() {
        let base = Path::new("/tmp/run");
        assert_eq!(relative_name(base, &base.join("split").join("train.csv")), "split/train.csv");
    }
}
