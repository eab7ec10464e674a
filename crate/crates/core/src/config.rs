//! Run configuration, loaded from JSON and overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::batching::{BatchMode, DEFAULT_BATCH_SIZE};
use crate::dataio::SynthSpec;
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_PATIENCE;
use crate::projection::OptimizerConfig;
use crate::quadruplet_loss::Margins;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Rbl,
    Quadruplet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Csv(PathBuf),
    Synth(SynthSpec),
}

/// Named experiment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Untrained projection, evaluated only.
    InitEmb,
    /// Quadruplet loss on balanced batches.
    QuadL,
    /// Rank-based loss on balanced batches.
    Rbl,
    /// Rank-based loss on unconstrained batches.
    RblUnc,
}

impl Experiment {
    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Experiment::InitEmb => cfg.max_epochs = 0,
            Experiment::QuadL => {
                cfg.loss = LossKind::Quadruplet;
                cfg.batch_mode = BatchMode::Balanced;
            }
            Experiment::Rbl => {
                cfg.loss = LossKind::Rbl;
                cfg.batch_mode = BatchMode::Balanced;
            }
            Experiment::RblUnc => {
                cfg.loss = LossKind::Rbl;
                cfg.batch_mode = BatchMode::Unconstrained;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub batch_mode: BatchMode,
    pub batch_size: usize,
    pub d_out: usize,
    pub optimizer: OptimizerConfig,
    pub margins: Margins,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub data: DataSource,
    /// Fine classes per coarse class moved to the unseen-class test set.
    pub holdout_per_coarse: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Rbl,
            batch_mode: BatchMode::Balanced,
            batch_size: DEFAULT_BATCH_SIZE,
            d_out: 3,
            optimizer: OptimizerConfig::default(),
            margins: Margins::default(),
            patience: DEFAULT_PATIENCE,
            max_epochs: 500,
            seed: 0,
            data: DataSource::Synth(SynthSpec::default()),
            holdout_per_coarse: 0,
            output_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.d_out < 1 {
            return Err(Error::Config("d_out must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        self.optimizer.validate()?;
        Margins::new(self.margins.fine, self.margins.coarse)?;
        if let DataSource::Synth(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }
}
