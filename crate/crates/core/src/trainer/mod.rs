//! Two-phase training: plain-ERM warmup, one clustering pass when warmup
//! ends, then prompt training with the full objective. Also checkpoints,
//! inference and run histories.

mod checkpoint;
mod config;
mod optim;

use std::io::Write;

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backbone::{Encoder, ParamSet};
use crate::data::{augment_image, Dataset};
use crate::discovery::{
    cluster_features, collect_style_features, AssignmentSlot, DiagnosticRow, DiagnosticsTracker,
    PseudoDomainAssignment,
};
use crate::error::{PldgError, Result};
use crate::objectives::{
    compute_loss, mixup_batch, Batch, DropoutSeed, LossBreakdown, ModelGrads, PldgModel, Toggles,
};
use crate::prompts::{adapter_weights, combine_prompts, AdapterParams, PromptBank, PromptWeights};
use crate::util::{rng_for, softmax};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{ClusteringOptions, Selection, TrainConfig, PRESETS};
pub use optim::AdamW;

/// Stream tags passed to [`rng_for`](crate::util::rng_for) with the run seed.
pub const TAG_INIT: u64 = 1;
pub const TAG_SHUFFLE: u64 = 2;
pub const TAG_AUGMENT: u64 = 3;
pub const TAG_MIXUP: u64 = 4;
pub const TAG_DROPOUT: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Prompted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub steps: usize,
    /// Mean of the per-step totals.
    pub train_loss: f64,
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: Option<usize>,
    pub best_metric: Option<f64>,
    pub stopped_early: bool,
    /// Epoch stamped on the pseudo-domain assignment, if one was made.
    pub assignment_epoch: Option<usize>,
    pub diagnostics: Vec<DiagnosticRow>,
}

impl TrainingHistory {
    /// Writes `epoch,train_loss,val_metric,selected`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "val_metric", "selected"])?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_metric.map(|v| v.to_string()).unwrap_or_default(),
                u8::from(self.selected_epoch == Some(e.epoch)).to_string(),
            ])?;
        }
        out.flush().map_err(|e| PldgError::io("history csv", e))?;
        Ok(())
    }
}

/// Writes `step,epoch,loss_total,loss_mixup,loss_weighted_ce,loss_weight_sup`.
pub fn write_training_log_csv<W: Write>(steps: &[StepRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "step",
        "epoch",
        "loss_total",
        "loss_mixup",
        "loss_weighted_ce",
        "loss_weight_sup",
    ])?;
    for s in steps {
        out.write_record([
            s.step.to_string(),
            s.epoch.to_string(),
            s.loss.total.to_string(),
            s.loss.mixup_loss.to_string(),
            s.loss.weighted_ce.to_string(),
            s.loss.weight_supervision.to_string(),
        ])?;
    }
    out.flush().map_err(|e| PldgError::io("training log csv", e))?;
    Ok(())
}

/// Hooks called while [`fit`] runs.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}
    fn on_assignment(&mut self, _assignment: &PseudoDomainAssignment) {}
    fn on_epoch(&mut self, _record: &EpochRecord, _model: &PldgModel) {}
}

/// Observer that ignores everything.
pub struct Quiet;

impl TrainObserver for Quiet {}

/// Observer that keeps every step record.
#[derive(Debug, Default)]
pub struct StepLog {
    pub steps: Vec<StepRecord>,
    pub assignments: Vec<PseudoDomainAssignment>,
}

impl TrainObserver for StepLog {
    fn on_step(&mut self, record: &StepRecord) {
        self.steps.push(record.clone());
    }

    fn on_assignment(&mut self, assignment: &PseudoDomainAssignment) {
        self.assignments.push(assignment.clone());
    }
}

/// Datasets for one run. `val_ood` is required when selecting on OOD validation.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub val_ood: Option<&'a Dataset>,
}

/// Builds the untrained model for a configuration.
pub fn init_model(cfg: &TrainConfig) -> Result<PldgModel> {
    cfg.validate()?;
    let init = |k: u64| rng_for(cfg.seed, &[TAG_INIT, k]);
    let seed_of = |k: u64| {
        use rand::RngCore;
        init(k).next_u64()
    };
    let encoder = Encoder::new(cfg.encoder.clone(), seed_of(0))?;
    let d = cfg.encoder.embed_dim;
    let prompts = cfg.toggles.prompts.then(|| {
        if cfg.toggles.generator {
            PromptBank::generator(cfg.num_domains, cfg.prompt_len, d, seed_of(1))
        } else {
            PromptBank::independent(cfg.num_domains, cfg.prompt_len, d, seed_of(1))
        }
    });
    let adapter = (cfg.toggles.prompts && cfg.toggles.adapter)
        .then(|| AdapterParams::init(d, cfg.adapter_hidden, cfg.num_domains, seed_of(2)));
    Ok(PldgModel {
        encoder,
        prompts,
        adapter,
    })
}

/// Class probabilities and, for prompted models, the prompt weights used.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Array2<f64>,
    pub weights: Vec<PromptWeights>,
}

/// Eval-mode inference: prompt-free feature, adapter weights (uniform when
/// there is no adapter), weighted prompt, prompted forward, softmax.
/// Models without prompts use the plain forward.
pub fn predict(model: &PldgModel, images: &[&[f32]]) -> Result<Prediction> {
    let (features, logits) = model.encoder.forward_plain(images)?;
    let Some(bank) = &model.prompts else {
        return Ok(Prediction {
            scores: softmax_rows(&logits),
            weights: Vec::new(),
        });
    };
    let weights = match &model.adapter {
        Some(a) => adapter_weights(a, &features)?,
        None => vec![PromptWeights::uniform(bank.num_domains()); images.len()],
    };
    let domain_prompts = bank.generate_all();
    let prompts: Vec<Array2<f64>> = weights
        .iter()
        .map(|w| combine_prompts(&domain_prompts, w.values()))
        .collect();
    let (_, logits) = model.encoder.forward_per_sample(images, &prompts)?;
    Ok(Prediction {
        scores: softmax_rows(&logits),
        weights,
    })
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let p = softmax(&row.to_vec());
        row.assign(&ndarray::Array1::from(p));
    }
    out
}

/// Scores a model on a dataset with the given metric.
pub fn evaluate(model: &PldgModel, dataset: &Dataset, metric: crate::evalkit::MetricKind) -> Result<f64> {
    let pred = predict(model, &dataset.pixels())?;
    metric.score(&pred.scores, &dataset.labels())
}

struct Optimizers {
    encoder: AdamW<crate::backbone::EncoderParams>,
    prompts: Option<AdamW<PromptBank>>,
    adapter: Option<AdamW<AdapterParams>>,
}

impl Optimizers {
    fn new(model: &PldgModel) -> Self {
        Optimizers {
            encoder: AdamW::new(&model.encoder.params),
            prompts: model.prompts.as_ref().map(AdamW::new),
            adapter: model.adapter.as_ref().map(AdamW::new),
        }
    }

    fn step(&mut self, model: &mut PldgModel, grads: &ModelGrads, cfg: &TrainConfig, phase: Phase) {
        // the head is the last four tensors: final norm and classifier
        let skip = if cfg.freeze_backbone {
            grads.encoder.tensors().len() - 4
        } else {
            0
        };
        self.encoder
            .step_from(&mut model.encoder.params, &grads.encoder, cfg.lr, cfg.weight_decay, skip);
        if phase == Phase::Warmup {
            return;
        }
        let lr = cfg.lr * cfg.prompt_lr_mult;
        if let (Some(opt), Some(p), Some(g)) = (
            self.prompts.as_mut(),
            model.prompts.as_mut(),
            grads.prompts.as_ref(),
        ) {
            opt.step(p, g, lr, cfg.weight_decay);
        }
        if let (Some(opt), Some(p), Some(g)) = (
            self.adapter.as_mut(),
            model.adapter.as_mut(),
            grads.adapter.as_ref(),
        ) {
            opt.step(p, g, lr, cfg.weight_decay);
        }
    }
}

/// Number of optimizer steps in one epoch.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Trains a model and returns the selected checkpoint with the run history.
pub fn fit(
    cfg: &TrainConfig,
    data: TrainData<'_>,
    observer: &mut dyn TrainObserver,
) -> Result<(Checkpoint, TrainingHistory)> {
    cfg.validate()?;
    let train = data.train;
    train.validate()?;
    if train.is_empty() {
        return Err(PldgError::Argument("training set is empty".into()));
    }
    if train.image_size != cfg.encoder.image_size || train.num_classes != cfg.encoder.num_classes {
        return Err(PldgError::Config(format!(
            "dataset {} is {}px with {} classes but the encoder expects {}px with {} classes",
            train.name, train.image_size, train.num_classes, cfg.encoder.image_size, cfg.encoder.num_classes
        )));
    }
    let val = match cfg.selection {
        Selection::TrainDomainVal => data.val,
        Selection::OodVal => data
            .val_ood
            .ok_or_else(|| PldgError::Config("ood-val selection needs an OOD validation set".into()))?,
    };
    let mut model = init_model(cfg)?;
    let mut opt = Optimizers::new(&model);
    let mut slot = AssignmentSlot::default();
    let mut domains = vec![0usize; train.len()];
    let mut tracker = (!cfg.diagnostics_layers.is_empty())
        .then(|| DiagnosticsTracker::new(cfg.diagnostics_layers.clone(), cfg.clustering_config()));
    let loss_cfg = cfg.loss_config();
    let warmup_cfg = crate::objectives::LossConfig {
        toggles: Toggles::NONE,
        ..loss_cfg
    };
    let size = cfg.encoder.image_size;
    let dropout_on = cfg.encoder.drop_rate > 0.0;

    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, PldgModel, usize)> = None;
    let mut since_best = 0usize;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let phase = if cfg.toggles.prompts && epoch > cfg.cluster_epoch {
            Phase::Prompted
        } else {
            Phase::Warmup
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut n_steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let mut aug_rng = rng_for(cfg.seed, &[TAG_AUGMENT, step as u64]);
            let owned: Vec<Vec<f32>> = chunk
                .iter()
                .map(|&i| augment_image(&train.samples[i].pixels, size, &cfg.augment, &mut aug_rng))
                .collect();
            let batch = Batch {
                images: owned.iter().map(|v| v.as_slice()).collect(),
                labels: chunk.iter().map(|&i| train.samples[i].class_label).collect(),
                domains: chunk.iter().map(|&i| domains[i]).collect(),
            };
            let dropout = DropoutSeed(dropout_on.then(|| {
                use rand::RngCore;
                rng_for(cfg.seed, &[TAG_DROPOUT, step as u64]).next_u64()
            }));
            let (loss, grads) = if phase == Phase::Prompted {
                let mixups = if cfg.toggles.mixup {
                    let mut rng = rng_for(cfg.seed, &[TAG_MIXUP, step as u64]);
                    Some(mixup_batch(
                        &batch.images,
                        &batch.labels,
                        &batch.domains,
                        cfg.num_domains,
                        cfg.alpha,
                        &mut rng,
                    )?)
                } else {
                    None
                };
                compute_loss(&model, &batch, mixups.as_deref(), &loss_cfg, dropout, true)
            } else {
                compute_loss(&model, &batch, None, &warmup_cfg, dropout, true)
            }
            .map_err(|e| match e {
                PldgError::Training(m) => PldgError::Training(format!("step {step} (epoch {epoch}): {m}")),
                other => other,
            })?;
            opt.step(&mut model, &grads.expect("gradients requested"), cfg, phase);
            observer.on_step(&StepRecord { step, epoch, loss });
            loss_sum += loss.total;
            n_steps += 1;
        }

        if let Some(t) = tracker.as_mut() {
            history.diagnostics.extend_from_slice(t.record(epoch, &model.encoder, train)?);
        }

        if cfg.toggles.prompts && epoch == cfg.cluster_epoch {
            let style = collect_style_features(&model.encoder, train, cfg.cluster_layer, 64, epoch)?;
            let result = cluster_features(&style, &train.labels(), &cfg.clustering_config())
                .map_err(|e| PldgError::Training(format!("clustering at epoch {epoch} failed: {e}")))?;
            let assignment = slot.assign_pseudo_domains(train, &style, &result)?;
            domains = assignment.aligned(train)?;
            info!("pseudo-domain sizes at epoch {epoch}: {:?}", assignment.domain_sizes());
            history.assignment_epoch = Some(epoch);
            observer.on_assignment(assignment);
        }

        // prompt runs only validate the prompted phase
        let validate = !cfg.toggles.prompts || phase == Phase::Prompted;
        let val_metric = if validate {
            Some(evaluate(&model, val, cfg.metric)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            phase,
            steps: n_steps,
            train_loss: loss_sum / n_steps as f64,
            val_metric,
        };
        info!(
            "epoch {epoch} {:?} loss {:.4} val {:?}",
            phase, record.train_loss, val_metric
        );
        observer.on_epoch(&record, &model);
        history.epochs.push(record);

        if let Some(v) = val_metric {
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, model.clone(), epoch));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    history.stopped_early = epoch < cfg.epochs;
                    break;
                }
            }
        }
    }

    let (metric, best_model, epoch) = best.ok_or_else(|| {
        PldgError::Training("no validation epoch ran, nothing to select".into())
    })?;
    history.selected_epoch = Some(epoch);
    history.best_metric = Some(metric);
    let checkpoint = Checkpoint::new(cfg.clone(), best_model, slot.get().cloned(), epoch, Some(metric));
    Ok((checkpoint, history))
}

#[cfg(test)]
mod tests;
