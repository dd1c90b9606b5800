use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{predict, Prediction, TrainConfig};
use crate::discovery::PseudoDomainAssignment;
use crate::error::{PldgError, Result};
use crate::objectives::PldgModel;

pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with the configuration and assignment it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub model: PldgModel,
    pub assignment: Option<PseudoDomainAssignment>,
    pub epoch: usize,
    pub val_metric: Option<f64>,
}

impl Checkpoint {
    pub fn new(
        config: TrainConfig,
        model: PldgModel,
        assignment: Option<PseudoDomainAssignment>,
        epoch: usize,
        val_metric: Option<f64>,
    ) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config,
            model,
            assignment,
            epoch,
            val_metric,
        }
    }

    pub fn predict(&self, images: &[&[f32]]) -> Result<Prediction> {
        predict(&self.model, images)
    }

    /// Checks that the stored parameters have the shapes the config implies.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PldgError::Checkpoint(m));
        if self.format_version != CHECKPOINT_VERSION {
            return bad(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.format_version
            ));
        }
        let cfg = &self.config;
        if self.model.encoder.config != cfg.encoder {
            return bad("encoder config differs from the run config".into());
        }
        let fresh = crate::backbone::Encoder::new(cfg.encoder.clone(), 0)?;
        use crate::backbone::ParamSet;
        let shapes = |p: &crate::backbone::EncoderParams| -> Vec<usize> {
            p.tensors().iter().map(|t| t.len()).collect()
        };
        if shapes(&fresh.params) != shapes(&self.model.encoder.params) {
            return bad("encoder parameter shapes do not match the encoder config".into());
        }
        match (&self.model.prompts, cfg.toggles.prompts) {
            (Some(bank), true) => {
                bank.validate()?;
                if bank.num_domains() != cfg.num_domains
                    || bank.prompt_len() != cfg.prompt_len
                    || bank.dim() != cfg.encoder.embed_dim
                {
                    return bad(format!(
                        "prompt bank is {}x{}x{} but the config asks for {}x{}x{}",
                        bank.num_domains(),
                        bank.prompt_len(),
                        bank.dim(),
                        cfg.num_domains,
                        cfg.prompt_len,
                        cfg.encoder.embed_dim
                    ));
                }
            }
            (None, false) => {}
            _ => return bad("prompt toggle does not match the stored parameters".into()),
        }
        match (&self.model.adapter, cfg.toggles.adapter) {
            (Some(a), true) => {
                if a.input_dim() != cfg.encoder.embed_dim || a.num_domains() != cfg.num_domains {
                    return bad("adapter shape does not match the config".into());
                }
            }
            (None, false) => {}
            _ => return bad("adapter toggle does not match the stored parameters".into()),
        }
        if !self.model.encoder.params.is_finite() {
            return bad("non-finite encoder parameters".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| PldgError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| PldgError::Checkpoint(e.to_string()))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| PldgError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PldgError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            PldgError::Checkpoint(m) => PldgError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
