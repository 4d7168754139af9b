//! Pipeline configuration: defaults, an optional TOML file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use framesplit::hdbscan::HdbscanParams;
use framesplit::metrics::{AmiNorm, NoisePolicy};
use framesplit::pacmap::PacmapConfig;
use framesplit::splitter::{NoiseGrouping, SplitSpec};
use framesplit::vlad::{DEFAULT_CODEBOOK_SIZE, DEFAULT_PCA_DIM};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    #[default]
    Hog,
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub source: SourceKind,
    pub hog_side: usize,
    pub local_descriptors: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub codebook_size: usize,
    pub pca_dim: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::Hog,
            hog_side: 128,
            local_descriptors: None,
            embeddings: None,
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            pca_dim: DEFAULT_PCA_DIM,
        }
    }
}

/// A resolved feature source.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    Hog { side: usize },
    Local { path: PathBuf, codebook_size: usize, pca_dim: usize },
    Global { path: PathBuf },
}

impl FeatureConfig {
    pub fn resolve(&self) -> Result<FeatureSource, CliError> {
        match self.source {
            SourceKind::Hog => Ok(FeatureSource::Hog { side: self.hog_side }),
            SourceKind::Local => Ok(FeatureSource::Local {
                path: self
                    .local_descriptors
                    .clone()
                    .ok_or_else(|| CliError::Config("local feature source needs a descriptor file".into()))?,
                codebook_size: self.codebook_size,
                pca_dim: self.pca_dim,
            }),
            SourceKind::Global => Ok(FeatureSource::Global {
                path: self
                    .embeddings
                    .clone()
                    .ok_or_else(|| CliError::Config("global feature source needs an embedding file".into()))?,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacmapSection {
    pub dim: usize,
    pub n_neighbors: usize,
    pub mn_ratio: f64,
    pub fp_ratio: f64,
    pub iters: [usize; 3],
    pub learning_rate: f64,
}

impl Default for PacmapSection {
    fn default() -> Self {
        let d = PacmapConfig::default();
        Self {
            dim: d.dim,
            n_neighbors: d.n_neighbors,
            mn_ratio: d.mn_ratio,
            fp_ratio: d.fp_ratio,
            iters: d.iters,
            learning_rate: d.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub ratios: [f64; 3],
    pub noise_grouping: NoiseGrouping,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            ratios: SplitSpec::default().ratios,
            noise_grouping: NoiseGrouping::ByVideo,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub noise_policy: NoisePolicy,
    pub ami_norm: AmiNorm,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub features: FeatureConfig,
    pub pacmap: PacmapSection,
    pub hdbscan: HdbscanParams,
    pub split: SplitSection,
    pub evaluate: EvaluateSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn pacmap_config(&self) -> PacmapConfig {
        let p = &self.pacmap;
        PacmapConfig {
            dim: p.dim,
            n_neighbors: p.n_neighbors,
            mn_ratio: p.mn_ratio,
            fp_ratio: p.fp_ratio,
            iters: p.iters,
            learning_rate: p.learning_rate,
            seed: self.seed,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            ratios: self.split.ratios,
            seed: self.seed,
        }
    }

    /// Checks every component's parameters up front.
    pub fn validate(&self) -> Result<(), CliError> {
        self.features.resolve()?;
        if self.features.codebook_size == 0 || self.features.pca_dim == 0 {
            return Err(CliError::Config("codebook_size and pca_dim must be positive".into()));
        }
        self.pacmap_config().validate()?;
        self.hdbscan.validate()?;
        self.split_spec().validate()?;
        Ok(())
    }
}
