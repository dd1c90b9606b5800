use serde::{Deserialize, Serialize};

use crate::backbone::EncoderConfig;
use crate::data::AugmentConfig;
use crate::discovery::{ClusteringConfig, KMeansConfig};
use crate::error::{PldgError, Result};
use crate::evalkit::MetricKind;
use crate::objectives::{LossConfig, Toggles, WeightNorm};

/// Which validation set drives checkpoint selection and early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    TrainDomainVal,
    OodVal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringOptions {
    pub normalize: bool,
    pub per_class: bool,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for ClusteringOptions {
    fn default() -> Self {
        ClusteringOptions {
            normalize: true,
            per_class: false,
            restarts: 10,
            max_iter: 300,
        }
    }
}

/// Full description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub num_domains: usize,
    pub prompt_len: usize,
    pub cluster_layer: usize,
    /// Last warmup epoch; clustering runs once when it ends.
    pub cluster_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Multiplies `lr` for prompt and adapter parameters.
    #[serde(default = "one")]
    pub prompt_lr_mult: f64,
    pub alpha: f64,
    pub lambda_w: f64,
    #[serde(default = "double")]
    pub weight_norm: WeightNorm,
    pub patience: usize,
    pub seed: u64,
    pub toggles: Toggles,
    pub selection: Selection,
    #[serde(default = "roc_auc")]
    pub metric: MetricKind,
    pub adapter_hidden: usize,
    /// Train only the classifier head of the backbone.
    #[serde(default)]
    pub freeze_backbone: bool,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub clustering: ClusteringOptions,
    /// Layers whose clustering is tracked every epoch; empty disables tracking.
    #[serde(default)]
    pub diagnostics_layers: Vec<usize>,
}

fn one() -> f64 {
    1.0
}
fn double() -> WeightNorm {
    WeightNorm::Double
}
fn roc_auc() -> MetricKind {
    MetricKind::RocAuc
}

pub const PRESETS: [&str; 5] = ["pldg-desk", "erm", "vitb16", "pldg-small", "erm-small"];

impl TrainConfig {
    /// Full method on the desk-scale backbone.
    pub fn pldg_desk() -> Self {
        TrainConfig {
            encoder: EncoderConfig::desk(),
            num_domains: 4,
            prompt_len: 4,
            cluster_layer: 1,
            cluster_epoch: 5,
            epochs: 30,
            batch_size: 32,
            lr: 3e-4,
            weight_decay: 1e-2,
            prompt_lr_mult: 1.0,
            alpha: 0.3,
            lambda_w: 1.0,
            weight_norm: WeightNorm::Double,
            patience: 22,
            seed: 0,
            toggles: Toggles::ALL,
            selection: Selection::TrainDomainVal,
            metric: MetricKind::RocAuc,
            adapter_hidden: 128,
            freeze_backbone: false,
            augment: AugmentConfig::default(),
            clustering: ClusteringOptions::default(),
            diagnostics_layers: Vec::new(),
        }
    }

    pub fn erm() -> Self {
        TrainConfig {
            toggles: Toggles::NONE,
            ..Self::pldg_desk()
        }
    }

    /// ViT-B/16 geometry with the melanoma optimizer settings.
    pub fn vitb16() -> Self {
        TrainConfig {
            encoder: EncoderConfig::vitb16(),
            epochs: 60,
            lr: 5e-6,
            weight_decay: 1e-2,
            adapter_hidden: 768,
            ..Self::pldg_desk()
        }
    }

    /// Small backbone that trains in seconds on one core.
    pub fn pldg_small() -> Self {
        TrainConfig {
            encoder: EncoderConfig {
                image_size: 16,
                patch_size: 4,
                embed_dim: 32,
                depth: 3,
                num_heads: 4,
                num_classes: 2,
                drop_rate: 0.0,
                mlp_ratio: 2,
            },
            epochs: 14,
            cluster_epoch: 4,
            lr: 1e-3,
            adapter_hidden: 32,
            patience: 22,
            ..Self::pldg_desk()
        }
    }

    pub fn erm_small() -> Self {
        TrainConfig {
            toggles: Toggles::NONE,
            ..Self::pldg_small()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "pldg-desk" => Ok(Self::pldg_desk()),
            "erm" => Ok(Self::erm()),
            "vitb16" => Ok(Self::vitb16()),
            "pldg-small" => Ok(Self::pldg_small()),
            "erm-small" => Ok(Self::erm_small()),
            other => Err(PldgError::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.toggles.validate()?;
        let fail = |m: String| Err(PldgError::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.toggles.prompts {
            if self.cluster_epoch < 1 || self.cluster_epoch >= self.epochs {
                return fail(format!(
                    "cluster_epoch must satisfy 1 <= cluster_epoch < epochs, got {} with epochs {}",
                    self.cluster_epoch, self.epochs
                ));
            }
            if self.num_domains == 0 {
                return fail("num_domains must be positive".into());
            }
            if self.cluster_layer < 1 || self.cluster_layer > self.encoder.depth {
                return fail(format!(
                    "cluster_layer {} outside 1..={}",
                    self.cluster_layer, self.encoder.depth
                ));
            }
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        for (name, v) in [
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
            ("prompt_lr_mult", self.prompt_lr_mult),
            ("lambda_w", self.lambda_w),
        ] {
            if !v.is_finite() || v < 0.0 {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.toggles.adapter && self.adapter_hidden == 0 {
            return fail("adapter_hidden must be positive".into());
        }
        if let Some(&l) = self
            .diagnostics_layers
            .iter()
            .find(|&&l| l < 1 || l > self.encoder.depth)
        {
            return fail(format!("diagnostics layer {l} outside 1..={}", self.encoder.depth));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            toggles: self.toggles,
            lambda_w: self.lambda_w,
            weight_norm: self.weight_norm,
        }
    }

    pub fn clustering_config(&self) -> ClusteringConfig {
        ClusteringConfig {
            num_domains: self.num_domains,
            layer: self.cluster_layer,
            normalize: self.clustering.normalize,
            per_class: self.clustering.per_class,
            kmeans: KMeansConfig {
                restarts: self.clustering.restarts,
                max_iter: self.clustering.max_iter,
                ..KMeansConfig::new(self.num_domains, self.seed)
            },
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PldgError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| PldgError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
