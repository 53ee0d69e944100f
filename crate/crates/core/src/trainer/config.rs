//! Run configuration: every knob a training run reads, serialized as one
//! JSON object so a run directory fully reproduces its schedule.

use serde::{Deserialize, Serialize};

use crate::captions::{CaptionKind, VALID_GROUP_SIZES};
use crate::error::{LatteError, Result};
use crate::mixer::{EnabledDescriptions, GapReference};
use crate::pseudo::FtLabelSource;

/// Training mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Dual pseudo-label streams over mixed prototype-text targets.
    #[default]
    Latteclip,
    /// Single stream on live class-template pseudo-labels.
    FlypPl,
    /// Single stream on ground-truth labels (upper bound).
    Oracle,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainMode::Latteclip => write!(f, "latteclip"),
            TrainMode::FlypPl => write!(f, "flyp_pl"),
            TrainMode::Oracle => write!(f, "oracle"),
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = LatteError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latteclip" => Ok(TrainMode::Latteclip),
            "flyp_pl" => Ok(TrainMode::FlypPl),
            "oracle" => Ok(TrainMode::Oracle),
            other => Err(LatteError::Config(format!("unknown train mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    AdamW,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_iterations: u64,
    pub max_epochs: u64,
    /// Prototype EMA momentum.
    pub mu: f64,
    /// Prototype blend weight inside the mixer.
    pub alpha: f64,
    pub group_size: usize,
    pub enabled_descriptions: Vec<CaptionKind>,
    pub use_mixer: bool,
    pub use_zs_loss: bool,
    pub use_ft_loss: bool,
    /// Fraction of the training split an epoch visits (fixed seeded subset).
    pub data_fraction: f64,
    pub seed: u64,
    pub ft_label_source: FtLabelSource,
    pub gap_reference: GapReference,
    pub train_logit_scale: bool,
    /// Skip the ft-stream prototype update when c_ft == c_zs for a sample.
    pub dedupe_streams: bool,
    /// Also differentiate the loss through the mixer weights.
    pub grad_through_weights: bool,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Latteclip,
            batch_size: 512,
            learning_rate: 1e-7,
            max_iterations: 2000,
            max_epochs: 50,
            mu: 0.99,
            alpha: 0.99,
            group_size: 4,
            enabled_descriptions: vec![CaptionKind::Class, CaptionKind::Image, CaptionKind::Group],
            use_mixer: true,
            use_zs_loss: true,
            use_ft_loss: true,
            data_fraction: 1.0,
            seed: 0,
            ft_label_source: FtLabelSource::Prototypes,
            gap_reference: GapReference::Top2,
            train_logit_scale: true,
            dedupe_streams: false,
            grad_through_weights: false,
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn enabled(&self) -> EnabledDescriptions {
        EnabledDescriptions {
            class: self.enabled_descriptions.contains(&CaptionKind::Class),
            image: self.enabled_descriptions.contains(&CaptionKind::Image),
            group: self.enabled_descriptions.contains(&CaptionKind::Group),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(LatteError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(LatteError::Config(format!(
                "learning_rate must be a nonnegative finite number, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(LatteError::Config(format!("mu must lie in [0,1], got {}", self.mu)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(LatteError::Config(format!(
                "alpha must lie in [0,1], got {}",
                self.alpha
            )));
        }
        if !VALID_GROUP_SIZES.contains(&self.group_size) {
            return Err(LatteError::Config(format!(
                "group_size must be one of {VALID_GROUP_SIZES:?}, got {}",
                self.group_size
            )));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(LatteError::Config(format!(
                "data_fraction must lie in (0,1], got {}",
                self.data_fraction
            )));
        }
        if self.mode == TrainMode::Latteclip {
            if !self.use_zs_loss && !self.use_ft_loss {
                return Err(LatteError::Config(
                    "at least one of use_zs_loss / use_ft_loss must be enabled".into(),
                ));
            }
            if self.enabled_descriptions.is_empty() {
                return Err(LatteError::Config(
                    "at least one description kind must be enabled".into(),
                ));
            }
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(LatteError::Config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
