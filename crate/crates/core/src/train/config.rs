use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::model::{DiscriminatorConfig, GeneratorConfig};

/// Optimisation schedule of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    /// Crop length in samples.
    pub segment_length: usize,
    pub epochs: usize,
    /// Hard cap on optimiser steps; 0 leaves only `epochs`.
    pub max_steps: usize,
    pub seed: u64,
    /// Validate every this many steps and after the last; 0 validates only at the end.
    pub val_every: usize,
    pub checkpoint_dir: PathBuf,
    pub lambda_fmap: f64,
    /// Global L2 gradient-norm ceiling for both networks.
    pub grad_clip: f64,
    /// Skips the discriminator update.
    pub freeze_discriminator: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 4,
            segment_length: 32768,
            epochs: 1,
            max_steps: 0,
            seed: 0,
            val_every: 100,
            checkpoint_dir: PathBuf::from("checkpoints"),
            lambda_fmap: super::DEFAULT_LAMBDA,
            grad_clip: 5.0,
            freeze_discriminator: false,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// Complete experiment description: `[train]`, `[generator]` and
/// `[discriminator]` sections of one TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::arg(format!("learning rate must be positive, got {}", t.lr)));
        }
        if t.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        let w = self.generator.stft.window_size;
        if t.segment_length < 4 * w {
            return Err(Error::arg(format!(
                "segment length {} is shorter than 4 STFT windows ({})",
                t.segment_length,
                4 * w
            )));
        }
        let rf = self.discriminator.receptive_field();
        if t.segment_length < rf {
            return Err(Error::arg(format!(
                "segment length {} is shorter than the discriminator receptive field {rf}",
                t.segment_length
            )));
        }
        if !(t.lambda_fmap >= 0.0 && t.lambda_fmap.is_finite()) {
            return Err(Error::arg("lambda_fmap must be finite and non-negative"));
        }
        if !(t.grad_clip > 0.0) {
            return Err(Error::arg("grad_clip must be positive"));
        }
        if t.epochs == 0 && t.max_steps == 0 {
            return Err(Error::arg("one of epochs or max_steps must be non-zero"));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return Err(Error::arg("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::arg(format!("config: {}", e.message())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are all TOML-representable")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
