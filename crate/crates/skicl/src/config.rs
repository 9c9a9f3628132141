//! Experiment configuration: JSON schema with fail-fast parsing (unknown
//! keys rejected) and defaults mirroring the training-details setup.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consistency::EdgeKind;
use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic(SyntheticConfig),
    Dirs(Vec<PathBuf>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d_embedding_width")]
    pub embedding_width: usize,
    #[serde(default = "d_psi_hidden")]
    pub psi_hidden: usize,
    #[serde(default = "d_channels")]
    pub channels: usize,
    #[serde(default = "d_kernel_size")]
    pub kernel_size: usize,
    #[serde(default = "d_dilations")]
    pub dilations: Vec<usize>,
    #[serde(default = "d_tau")]
    pub tau: usize,
    #[serde(default = "d_horizon")]
    pub horizon: usize,
}

fn d_embedding_width() -> usize {
    16
}
fn d_psi_hidden() -> usize {
    128
}
fn d_channels() -> usize {
    16
}
fn d_kernel_size() -> usize {
    2
}
fn d_dilations() -> Vec<usize> {
    vec![1, 2]
}
fn d_tau() -> usize {
    12
}
fn d_horizon() -> usize {
    3
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embedding_width: d_embedding_width(),
            psi_hidden: d_psi_hidden(),
            channels: d_channels(),
            kernel_size: d_kernel_size(),
            dilations: d_dilations(),
            tau: d_tau(),
            horizon: d_horizon(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_one")]
    pub alpha: f64,
    #[serde(default = "d_one")]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_base_lr")]
    pub base_lr: f64,
    #[serde(default = "d_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "d_lr_decay_every")]
    pub lr_decay_every: usize,
    /// Early-stopping patience in epochs; 0 disables early stopping and
    /// best-weight restore (final-epoch weights are kept).
    #[serde(default = "d_patience")]
    pub patience: usize,
    /// What early stopping and best-weight restore are keyed on.
    #[serde(default)]
    pub early_stop_metric: EarlyStopMetric,
}

/// `val_mae` tracks forecast error only; `val_loss` tracks the full
/// training objective (forecast + lambda * consistency) on the validation
/// windows, which keeps structure learning from being discarded on series
/// whose forecast error is noise-bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    #[default]
    ValMae,
    ValLoss,
}

fn d_epochs() -> usize {
    30
}
fn d_batch_size() -> usize {
    8
}
fn d_one() -> f64 {
    1.0
}
fn d_base_lr() -> f64 {
    1e-4
}
fn d_lr_decay() -> f64 {
    0.8
}
fn d_lr_decay_every() -> usize {
    20
}
fn d_patience() -> usize {
    10
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            epochs: d_epochs(),
            batch_size: d_batch_size(),
            alpha: 1.0,
            lambda: 1.0,
            seed: 0,
            base_lr: d_base_lr(),
            lr_decay: d_lr_decay(),
            lr_decay_every: d_lr_decay_every(),
            patience: d_patience(),
            early_stop_metric: EarlyStopMetric::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selector {
    #[serde(rename = "ski-cl")]
    SkiCl,
    #[serde(rename = "er")]
    Er,
    #[serde(rename = "none")]
    None,
}

impl std::str::FromStr for Selector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ski-cl" => Ok(Selector::SkiCl),
            "er" => Ok(Selector::Er),
            "none" => Ok(Selector::None),
            other => Err(Error::Config(format!(
                "unknown selector `{other}` (expected ski-cl, er or none)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySection {
    #[serde(default = "d_selector")]
    pub selector: Selector,
    #[serde(default = "d_budget_ratio")]
    pub budget_ratio: f64,
    #[serde(default = "d_n_parts")]
    pub n_parts: usize,
    #[serde(default = "d_k_max")]
    pub k_max: usize,
    #[serde(default = "d_delta1")]
    pub delta1: usize,
    /// None means open (delta2 = regime sample count).
    #[serde(default)]
    pub delta2: Option<usize>,
}

fn d_selector() -> Selector {
    Selector::SkiCl
}
fn d_budget_ratio() -> f64 {
    0.01
}
fn d_n_parts() -> usize {
    10
}
fn d_k_max() -> usize {
    7
}
fn d_delta1() -> usize {
    1
}

impl Default for ReplaySection {
    fn default() -> Self {
        ReplaySection {
            selector: d_selector(),
            budget_ratio: d_budget_ratio(),
            n_parts: d_n_parts(),
            k_max: d_k_max(),
            delta1: d_delta1(),
            delta2: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub replay: ReplaySection,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.replay.budget_ratio > 0.0 && self.replay.budget_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "budget_ratio must lie in (0,1], got {}",
                self.replay.budget_ratio
            )));
        }
        if self.trainer.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.trainer.alpha < 0.0 {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        if self.trainer.batch_size == 0 || self.trainer.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if self.trainer.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be >= 1".into()));
        }
        if let DataConfig::Dirs(dirs) = &self.data {
            if dirs.is_empty() {
                return Err(Error::Config("data.dirs must not be empty".into()));
            }
            for d in dirs {
                if !d.exists() {
                    return Err(Error::Config(format!(
                        "regime directory {} does not exist",
                        d.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Model config for data with `n_vars` variables and the given prior
    /// edge kind.
    pub fn model_config(&self, n_vars: usize, edge_kind: EdgeKind) -> ModelConfig {
        ModelConfig {
            n_vars,
            tau: self.model.tau,
            horizon: self.model.horizon,
            embedding_width: self.model.embedding_width,
            psi_hidden: self.model.psi_hidden,
            channels: self.model.channels,
            kernel_size: self.model.kernel_size,
            dilations: self.model.dilations.clone(),
            edge_kind,
        }
    }
}
