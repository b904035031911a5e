//! Experiment configuration read from a TOML key-value file.
//!
//! Every key is optional; unknown keys are rejected so typos surface as
//! configuration errors instead of silently using a default.
//!
//! ```toml
//! step_table_version = 1
//! seed = 0
//! lambdas = [0.001, 0.002, 0.004, 0.008]
//! train_dir = "data/train"   # PPM/PNG files; synthetic images if absent
//! eval_dir = "data/eval"
//! model_dir = "models"       # defaults to the output directory
//! iterations = 2000
//! batch_size = 4
//! learning_rate = 0.003
//! finetune_iterations = 1000
//! finetune_learning_rate = 0.05
//! synthetic_count = 64
//! synthetic_size = 64
//!
//! [arch]
//! hidden = [32, 64]
//! latent = 64
//! hyper = 32
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::codec::{Architecture, FinetuneConfig, TrainConfig, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::harness::dataset::synthetic_set;
use crate::harness::image_io::load_dir;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub step_table_version: u8,
    pub seed: u64,
    pub lambdas: Vec<f64>,
    pub train_dir: Option<PathBuf>,
    pub eval_dir: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub finetune_iterations: usize,
    pub finetune_learning_rate: f64,
    pub synthetic_count: usize,
    pub synthetic_size: usize,
    pub arch: Architecture,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let f = FinetuneConfig::default();
        HarnessConfig {
            step_table_version: FORMAT_VERSION,
            seed: 0,
            lambdas: t.lambdas,
            train_dir: None,
            eval_dir: None,
            model_dir: None,
            iterations: t.iterations,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            finetune_iterations: f.iterations,
            finetune_learning_rate: f.learning_rate,
            synthetic_count: 64,
            synthetic_size: 64,
            arch: Architecture::default(),
        }
    }
}

impl HarnessConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: HarnessConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_table_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "step table version {} is not supported (expected {FORMAT_VERSION})",
                self.step_table_version
            )));
        }
        let a = self.arch;
        if a.hidden.contains(&0) || a.latent == 0 || a.hyper == 0 {
            return Err(Error::Config("architecture widths must be positive".into()));
        }
        if self.lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("lambdas must be strictly increasing".into()));
        }
        if self.synthetic_size == 0 || self.synthetic_size % crate::codec::TOTAL_DOWNSAMPLE != 0 {
            return Err(Error::Config(format!(
                "synthetic_size must be a positive multiple of {}",
                crate::codec::TOTAL_DOWNSAMPLE
            )));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            iterations: self.iterations,
            lambdas: self.lambdas.clone(),
            seed: self.seed,
            dataset: self.train_dir.clone(),
            arch: self.arch,
            snapshot_every: 0,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            iterations: self.finetune_iterations,
            learning_rate: self.finetune_learning_rate,
            seed: self.seed,
            ..FinetuneConfig::default()
        }
    }

    /// Training images, or a seeded synthetic set when no directory is set.
    pub fn train_images(&self) -> Result<Vec<(String, Tensor)>> {
        self.images(self.train_dir.as_deref(), self.seed.wrapping_mul(2).wrapping_add(1), "train")
    }

    /// Held-out images; the synthetic fallback never overlaps the training set.
    pub fn eval_images(&self) -> Result<Vec<(String, Tensor)>> {
        self.images(self.eval_dir.as_deref(), self.seed.wrapping_mul(2).wrapping_add(2), "eval")
    }

    fn images(&self, dir: Option<&Path>, synth_seed: u64, label: &str) -> Result<Vec<(String, Tensor)>> {
        let images = match dir {
            Some(d) => load_dir(d)?,
            None => synthetic_set(self.synthetic_count, self.synthetic_size, synth_seed)
                .into_iter()
                .enumerate()
                .map(|(i, t)| (format!("{label}{i:03}"), t))
                .collect(),
        };
        if images.is_empty() {
            return Err(Error::Argument(format!("no {label} images found")));
        }
        Ok(images)
    }
}
