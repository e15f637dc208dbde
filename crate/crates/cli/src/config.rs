//! Run configuration: a JSON file plus command-line overrides.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aad_core::{ArchConfig, Architecture, FeatureConfig, IsolationForestConfig, TrainConfig};
use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

/// Cache directory override, takes precedence over the config file.
pub const CACHE_ENV: &str = "AAD_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelId {
    Network(Architecture),
    IsolationForest,
}

impl ModelId {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Network(a) => a.as_str(),
            ModelId::IsolationForest => "iforest",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "iforest" {
            return Ok(ModelId::IsolationForest);
        }
        s.parse().map(ModelId::Network).map_err(|_| {
            let names: Vec<&str> = Architecture::ALL.iter().map(|a| a.as_str()).collect();
            format!("unknown model `{s}`, expected one of {} or iforest", names.join(", "))
        })
    }
}

impl Serialize for ModelId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ModelId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Effective settings of a run. Relative paths resolve against the working
/// directory. The top-level `seed` replaces `train.seed` and `iforest.seed`.
/// `architecture.input_hw` is taken from the cached features at train time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    /// Audio root; defaults to the manifest's directory.
    pub dataset_root: Option<PathBuf>,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub model: ModelId,
    pub seed: u64,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub architecture: ArchConfig,
    pub iforest: IsolationForestConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.csv"),
            dataset_root: None,
            cache_dir: PathBuf::from("cache"),
            output_dir: PathBuf::from("runs"),
            model: ModelId::Network(Architecture::SkipCaeTransformer),
            seed: 0,
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            architecture: ArchConfig::default(),
            iforest: IsolationForestConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Propagates the master seed and checks ranges.
    pub fn finalize(&mut self) -> Result<()> {
        self.train.seed = self.seed;
        self.iforest.seed = self.seed;
        self.train.validate()?;
        self.features.validate(aad_core::dataset::SAMPLE_RATE)?;
        if self.iforest.n_trees == 0 {
            bail!("iforest.n_trees must be positive");
        }
        Ok(())
    }

    pub fn model_dir(&self) -> PathBuf {
        self.output_dir.join(self.model.as_str())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.model_dir().join("model.ckpt")
    }

    pub fn scores_path(&self) -> PathBuf {
        self.model_dir().join("scores.csv")
    }
}

/// Flags shared by the data-driven subcommands. Every flag overrides the
/// matching config field.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub dataset_root: Option<PathBuf>,
    #[arg(long, env = CACHE_ENV)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// dcase_ae, duman_cae, skip_cae, skip_cae_transformer or iforest.
    #[arg(long)]
    pub model: Option<ModelId>,
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub frame_ms: Option<u32>,
    #[arg(long)]
    pub hop_ms: Option<u32>,
    #[arg(long)]
    pub n_mels: Option<usize>,
    #[arg(long)]
    pub fft_size: Option<usize>,
    #[arg(long)]
    pub fmin: Option<f64>,
    #[arg(long)]
    pub fmax: Option<f64>,
    #[arg(long)]
    pub log_floor: Option<f64>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,

    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_samples: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag {
                    cfg.$($field).+ = v.clone().into();
                })*
            };
        }
        set!(
            manifest => manifest,
            cache_dir => cache_dir,
            output_dir => output_dir,
            model => model,
            seed => seed,
            frame_ms => features.frame_ms,
            hop_ms => features.hop_ms,
            n_mels => features.n_mels,
            fft_size => features.fft_size,
            fmin => features.fmin,
            fmax => features.fmax,
            log_floor => features.log_floor,
            epochs => train.epochs,
            batch_size => train.batch_size,
            lr_max => train.lr_max,
            lr_min => train.lr_min,
            restarts => train.restarts,
            patience => train.patience,
            weight_decay => train.weight_decay,
            adam_eps => train.eps,
            val_fraction => train.val_fraction,
            trees => iforest.n_trees,
            max_samples => iforest.max_samples,
        );
        if let Some(b) = self.beta1 {
            cfg.train.betas.0 = b;
        }
        if let Some(b) = self.beta2 {
            cfg.train.betas.1 = b;
        }
        if let Some(root) = &self.dataset_root {
            cfg.dataset_root = Some(root.clone());
        }
        cfg.finalize()?;
        Ok(cfg)
    }
}
