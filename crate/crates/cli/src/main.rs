use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use framesplit::corpus::load_manifest;
use framesplit::metrics::{AmiNorm, NoisePolicy};
use framesplit::splitter::NoiseGrouping;
use framesplit_cli::commands::{
    cmd_cluster, cmd_evaluate, cmd_features, cmd_pipeline, cmd_reduce, cmd_split, cmd_synth,
};
use framesplit_cli::config::{PipelineConfig, SourceKind};
use framesplit_cli::verify::{run_battery, BatterySize};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Cluster-based train/val/test splitting of video frame datasets.
#[derive(Debug, Parser)]
#[command(name = "framesplit", version)]
struct Cli {
    /// Seed for every randomized stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results depend on the seed only.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML config file. Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print reports as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
#[group(multiple = false)]
struct SourceArgs {
    /// HOG features at the given input side (default 128).
    #[arg(long, value_name = "SIDE", num_args = 0..=1, default_missing_value = "128")]
    hog: Option<usize>,
    /// Local descriptor file (LDS1), VLAD-encoded and PCA-reduced.
    #[arg(long, value_name = "PATH")]
    local_descriptors: Option<PathBuf>,
    /// Precomputed global embeddings (EMB1), rows addressed by the manifest.
    #[arg(long, value_name = "PATH")]
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct VladArgs {
    /// VLAD codebook size.
    #[arg(long)]
    codebook_size: Option<usize>,
    /// PCA output dimension for VLAD vectors.
    #[arg(long)]
    pca_dim: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct PacmapArgs {
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n_neighbors: Option<usize>,
    #[arg(long)]
    mn_ratio: Option<f64>,
    #[arg(long)]
    fp_ratio: Option<f64>,
    /// Iterations per phase, e.g. 100,100,250.
    #[arg(long, value_parser = parse_iters)]
    iters: Option<[usize; 3]>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Debug, Args, Default)]
struct HdbscanArgs {
    #[arg(long)]
    min_cluster_size: Option<usize>,
    /// Defaults to min-cluster-size.
    #[arg(long)]
    min_samples: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct SplitArgs {
    /// Train,val,test fractions summing to 1, e.g. 0.7,0.15,0.15.
    #[arg(long, value_parser = parse_ratios)]
    ratios: Option<[f64; 3]>,
    /// How noise frames are grouped: by-video or singletons.
    #[arg(long, value_parser = parse_kebab::<NoiseGrouping>)]
    noise_grouping: Option<NoiseGrouping>,
}

#[derive(Debug, Args, Default)]
struct EvaluateArgs {
    /// Noise frames as one cluster (single-cluster) or each alone (singletons).
    #[arg(long, value_parser = parse_kebab::<NoisePolicy>)]
    noise_policy: Option<NoisePolicy>,
    /// AMI normalizer: arithmetic, max, min or geometric.
    #[arg(long, value_parser = parse_kebab::<AmiNorm>)]
    ami_norm: Option<AmiNorm>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus of PNG frames and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        videos: usize,
        /// Frames per video.
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// Image side in pixels.
        #[arg(long, default_value_t = 128)]
        side: usize,
    },
    /// Compute one feature vector per manifest frame.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        vlad: VladArgs,
    },
    /// Embed features with PaCMAP.
    Reduce {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pacmap: PacmapArgs,
    },
    /// Cluster an embedding with HDBSCAN.
    Cluster {
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hdbscan: HdbscanArgs,
        /// Also write the condensed tree as JSON.
        #[arg(long, value_name = "FILE")]
        tree_json: Option<PathBuf>,
    },
    /// Assign whole clusters to train/val/test and report video leakage.
    Split {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for train.csv, val.csv, test.csv and leakage.json.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Score a labeling against the manifest's video ids.
    Evaluate {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        eval: EvaluateArgs,
    },
    /// Run every stage into one directory and write run.json.
    Pipeline {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// video_id,fps table; keeps one frame per second of listed videos.
        #[arg(long, value_name = "FILE")]
        fps_table: Option<PathBuf>,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        vlad: VladArgs,
        #[command(flatten)]
        pacmap: PacmapArgs,
        #[command(flatten)]
        hdbscan: HdbscanArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[command(flatten)]
        eval: EvaluateArgs,
    },
    /// Run the oracle battery and print its reports as JSON.
    #[command(hide = true)]
    Verify {
        /// Fewer cases per section.
        #[arg(long)]
        quick: bool,
    },
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [a, b, c] = parts.as_slice() else {
        return Err(format!("expected three comma-separated values, got `{s}`"));
    };
    let parse = |v: &str| v.parse::<T>().map_err(|_| format!("`{v}` is not a valid number"));
    Ok([parse(a)?, parse(b)?, parse(c)?])
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    parse_triple(s)
}

fn parse_iters(s: &str) -> Result<[usize; 3], String> {
    parse_triple(s)
}

fn parse_kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl SourceArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        let f = &mut cfg.features;
        if let Some(side) = self.hog {
            f.source = SourceKind::Hog;
            f.hog_side = side;
        } else if let Some(path) = self.local_descriptors {
            f.source = SourceKind::Local;
            f.local_descriptors = Some(path);
        } else if let Some(path) = self.embeddings {
            f.source = SourceKind::Global;
            f.embeddings = Some(path);
        }
    }
}

impl VladArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        set(&mut cfg.features.codebook_size, self.codebook_size);
        set(&mut cfg.features.pca_dim, self.pca_dim);
    }
}

impl PacmapArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        let p = &mut cfg.pacmap;
        set(&mut p.dim, self.dim);
        set(&mut p.n_neighbors, self.n_neighbors);
        set(&mut p.mn_ratio, self.mn_ratio);
        set(&mut p.fp_ratio, self.fp_ratio);
        set(&mut p.iters, self.iters);
        set(&mut p.learning_rate, self.learning_rate);
    }
}

impl HdbscanArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        set(&mut cfg.hdbscan.min_cluster_size, self.min_cluster_size);
        if self.min_samples.is_some() {
            cfg.hdbscan.min_samples = self.min_samples;
        }
    }
}

impl SplitArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        set(&mut cfg.split.ratios, self.ratios);
        set(&mut cfg.split.noise_grouping, self.noise_grouping);
    }
}

impl EvaluateArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        set(&mut cfg.evaluate.noise_policy, self.noise_policy);
        set(&mut cfg.evaluate.ami_norm, self.ami_norm);
    }
}

fn emit<T: Serialize + std::fmt::Display>(report: &T, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(report)?);
    } else {
        println!("{report}");
    }
    Ok(())
}

fn manifest_at(path: &Path) -> Result<framesplit::corpus::CorpusManifest> {
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    let json = cli.json;
    match cli.command {
        Command::Synth {
            out,
            videos,
            frames,
            side,
        } => emit(&cmd_synth(&out, videos, frames, side, cfg.seed)?, json),
        Command::Features {
            manifest,
            out,
            source,
            vlad,
        } => {
            source.apply(&mut cfg);
            vlad.apply(&mut cfg);
            let source = cfg.features.resolve()?;
            let report = cmd_features(&manifest_at(&manifest)?, &source, cfg.seed, &out)?;
            emit(&report, json)
        }
        Command::Reduce { features, out, pacmap } => {
            pacmap.apply(&mut cfg);
            let pacmap = cfg.pacmap_config();
            pacmap.validate()?;
            emit(&cmd_reduce(&features, &pacmap, &out)?, json)
        }
        Command::Cluster {
            embedding,
            manifest,
            out,
            hdbscan,
            tree_json,
        } => {
            hdbscan.apply(&mut cfg);
            let report = cmd_cluster(&embedding, &manifest_at(&manifest)?, &cfg.hdbscan, &out, tree_json.as_deref())?;
            emit(&report, json)
        }
        Command::Split {
            labels,
            manifest,
            out,
            split,
        } => {
            split.apply(&mut cfg);
            let report = cmd_split(&labels, &manifest_at(&manifest)?, &cfg.split, cfg.seed, &out)?;
            emit(&report, json)
        }
        Command::Evaluate { labels, manifest, eval } => {
            eval.apply(&mut cfg);
            emit(&cmd_evaluate(&labels, &manifest_at(&manifest)?, &cfg.evaluate)?, json)
        }
        Command::Pipeline {
            manifest,
            out,
            fps_table,
            source,
            vlad,
            pacmap,
            hdbscan,
            split,
            eval,
        } => {
            source.apply(&mut cfg);
            vlad.apply(&mut cfg);
            pacmap.apply(&mut cfg);
            hdbscan.apply(&mut cfg);
            split.apply(&mut cfg);
            eval.apply(&mut cfg);
            emit(&cmd_pipeline(&manifest, &cfg, fps_table.as_deref(), &out)?, json)
        }
        Command::Verify { quick } => {
            let size = if quick {
                BatterySize {
                    metric_pairs: 50,
                    gradient_instances: 5,
                    loss_runs: 2,
                    blob_seeds: 3,
                    tiny_hdbscan: 30,
                    split_instances: 100,
                    vlad_frames: 30,
                    kmeans_instances: 5,
                }
            } else {
                BatterySize::default()
            };
            let sections = run_battery(&size, cfg.seed)?;
            for s in &sections {
                eprintln!(
                    "{:<28} {} ({} cases, {} failed)",
                    s.name,
                    if s.passed { "PASS" } else { "FAIL" },
                    s.cases,
                    s.failures
                );
            }
            println!("{}", serde_json::to_string_pretty(&sections)?);
            if sections.iter().any(|s| !s.passed) {
                bail!("oracle battery failed");
            }
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .context("building the thread pool")?;
    pool.install(|| run(cli))
}
