//! Loss terms and their gradients.
//!
//! * domain loss: cross-entropy of each image under its pseudo-domain's prompt;
//! * mixup loss: images mixed across pseudo-domains, routed through the
//!   dominant image's prompt, with the two labels weighted by `λ` and `1 − λ`;
//! * weighted loss: the simulated-inference path (prompt-free feature →
//!   adapter → weighted prompt → prompted forward) plus binary cross-entropy
//!   supervision of the adapter weights by the pseudo-domain labels.
//!
//! Inside the weighted path the domain prompts are constants and the adapter
//! input is a constant, so its supervision only trains the adapter and its
//! cross-entropy trains the adapter, backbone and head.

mod mixup;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::backbone::{Encoder, EncoderParams, ParamSet};
use crate::error::{PldgError, Result};
use crate::prompts::{combine_prompts, AdapterParams, PromptBank, PromptWeights};
use crate::util::{self, log_sum_exp, rng_for, softmax};

pub use mixup::{mix_pixels, mixup_batch, sample_lambda, MixupSample};

/// Clamp applied to adapter weights before taking logs.
pub const WEIGHT_CLAMP: f64 = 1e-7;
const CHUNK: usize = 8;

/// Which method components are active: prompts (P), adapter (A), mixup (M), generator (G).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toggles {
    pub prompts: bool,
    pub adapter: bool,
    pub mixup: bool,
    pub generator: bool,
}

impl Toggles {
    pub const NONE: Toggles = Toggles {
        prompts: false,
        adapter: false,
        mixup: false,
        generator: false,
    };
    pub const ALL: Toggles = Toggles {
        prompts: true,
        adapter: true,
        mixup: true,
        generator: true,
    };

    pub fn validate(&self) -> Result<()> {
        if !self.prompts && (self.adapter || self.mixup || self.generator) {
            return Err(PldgError::Config(
                "adapter, mixup and generator toggles require prompts".into(),
            ));
        }
        Ok(())
    }

    /// Ablation name such as `+P+A+M+G`, or `baseline` with everything off.
    pub fn label(&self) -> String {
        let mut s = String::new();
        for (on, tag) in [
            (self.prompts, "+P"),
            (self.adapter, "+A"),
            (self.mixup, "+M"),
            (self.generator, "+G"),
        ] {
            if on {
                s.push_str(tag);
            }
        }
        if s.is_empty() {
            "baseline".into()
        } else {
            s
        }
    }

    pub fn parse(label: &str) -> Result<Toggles> {
        if label == "baseline" || label == "none" || label.is_empty() {
            return Ok(Toggles::NONE);
        }
        let mut t = Toggles::NONE;
        for part in label.split('+').filter(|p| !p.is_empty()) {
            match part {
                "P" => t.prompts = true,
                "A" => t.adapter = true,
                "M" => t.mixup = true,
                "G" => t.generator = true,
                other => return Err(PldgError::Config(format!("unknown toggle {other:?}"))),
            }
        }
        t.validate()?;
        Ok(t)
    }
}

/// Normalization of the weight-supervision term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightNorm {
    /// `(1/M) Σ_m (1/M) [...]`, the printed form.
    Double,
    /// `(1/M) Σ_m [...]`.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub toggles: Toggles,
    pub lambda_w: f64,
    pub weight_norm: WeightNorm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            toggles: Toggles::ALL,
            lambda_w: 1.0,
            weight_norm: WeightNorm::Double,
        }
    }
}

/// The encoder plus the optional prompt bank and adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PldgModel {
    pub encoder: Encoder,
    pub prompts: Option<PromptBank>,
    pub adapter: Option<AdapterParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: EncoderParams,
    pub prompts: Option<PromptBank>,
    pub adapter: Option<AdapterParams>,
}

impl PldgModel {
    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: self.encoder.params.zeros_like(),
            prompts: self.prompts.as_ref().map(|p| p.zeros_like()),
            adapter: self.adapter.as_ref().map(|a| a.zeros_like()),
        }
    }

    pub fn num_domains(&self) -> usize {
        self.prompts.as_ref().map_or(1, |p| p.num_domains())
    }

    fn bank(&self) -> Result<&PromptBank> {
        self.prompts
            .as_ref()
            .ok_or_else(|| PldgError::Config("model has no domain prompts".into()))
    }

    fn adapter(&self) -> Result<&AdapterParams> {
        self.adapter
            .as_ref()
            .ok_or_else(|| PldgError::Config("model has no adapter".into()))
    }
}

impl ModelGrads {
    pub fn add_assign(&mut self, other: &ModelGrads) {
        self.encoder.add_assign(&other.encoder);
        if let (Some(a), Some(b)) = (self.prompts.as_mut(), other.prompts.as_ref()) {
            a.add_assign(b);
        }
        if let (Some(a), Some(b)) = (self.adapter.as_mut(), other.adapter.as_ref()) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite()
            && self.prompts.as_ref().is_none_or(|p| p.is_finite())
            && self.adapter.as_ref().is_none_or(|a| a.is_finite())
    }
}

/// A training batch: pixels, class labels and pseudo-domain ids, aligned.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub images: Vec<&'a [f32]>,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn check(&self, num_classes: usize) -> Result<()> {
        if self.images.is_empty() {
            return Err(PldgError::Argument("empty batch".into()));
        }
        if self.labels.len() != self.len() || self.domains.len() != self.len() {
            return Err(PldgError::Argument("batch fields are not aligned".into()));
        }
        check_labels(&self.labels, num_classes)
    }
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(PldgError::Argument(format!(
            "label {bad} outside [0, {num_classes})"
        )));
    }
    Ok(())
}

/// Cross-entropy against a soft target; returns the loss and `∂loss/∂logits`.
pub fn soft_cross_entropy(logits: ArrayView1<f64>, target: &[(usize, f64)]) -> (f64, Array1<f64>) {
    let z = logits.to_vec();
    let lse = log_sum_exp(&z);
    let mut grad = Array1::from(softmax(&z));
    let mut loss = 0.0;
    for &(y, w) in target {
        if w != 0.0 {
            loss += w * (lse - z[y]);
            grad[y] -= w;
        }
    }
    (loss, grad)
}

pub fn cross_entropy(logits: ArrayView1<f64>, label: usize) -> (f64, Array1<f64>) {
    soft_cross_entropy(logits, &[(label, 1.0)])
}

/// Mean cross-entropy of `B × C` logits.
pub fn domain_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() || labels.is_empty() {
        return Err(PldgError::Argument("logits and labels are not aligned".into()));
    }
    check_labels(labels, logits.ncols())?;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| cross_entropy(row, y).0)
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean of `λ CE(logits, y_i) + (1 − λ) CE(logits, y_j)` over mixed samples.
pub fn mixup_loss_from_logits(logits: &Array2<f64>, samples: &[MixupSample]) -> Result<f64> {
    if logits.nrows() != samples.len() || samples.is_empty() {
        return Err(PldgError::Argument("logits and mixup samples are not aligned".into()));
    }
    let c = logits.ncols();
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(samples)
        .map(|(row, s)| {
            check_labels(&[s.y_i, s.y_j], c)?;
            let (li, _) = cross_entropy(row, s.y_i);
            let (lj, _) = cross_entropy(row, s.y_j);
            Ok(s.lambda * li + (1.0 - s.lambda) * lj)
        })
        .sum::<Result<f64>>()?;
    Ok(total / samples.len() as f64)
}

fn clamp_weight(w: f64) -> (f64, bool) {
    if w < WEIGHT_CLAMP {
        (WEIGHT_CLAMP, true)
    } else if w > 1.0 - WEIGHT_CLAMP {
        (1.0 - WEIGHT_CLAMP, true)
    } else {
        (w, false)
    }
}

/// `−ln w_m − Σ_{t≠m} ln(1 − w_t)` and its gradient in `w`.
fn supervision_bracket(w: &Array1<f64>, domain: usize) -> (f64, Array1<f64>) {
    let mut grad = Array1::zeros(w.len());
    let mut value = 0.0;
    for (t, &wt) in w.iter().enumerate() {
        let (c, clamped) = clamp_weight(wt);
        if t == domain {
            value -= c.ln();
            if !clamped {
                grad[t] = -1.0 / c;
            }
        } else {
            value -= (1.0 - c).ln();
            if !clamped {
                grad[t] = 1.0 / (1.0 - c);
            }
        }
    }
    (value, grad)
}

/// Per-sample coefficients of the supervision brackets: samples are grouped
/// by pseudo-domain, averaged within the group, and the groups summed with
/// the configured normalization. Domains absent from the batch contribute 0.
fn supervision_coefficients(domains: &[usize], num_domains: usize, norm: WeightNorm) -> Vec<f64> {
    let mut counts = vec![0usize; num_domains];
    for &d in domains {
        counts[d] += 1;
    }
    let m = num_domains as f64;
    let outer = match norm {
        WeightNorm::Double => 1.0 / (m * m),
        WeightNorm::Single => 1.0 / m,
    };
    domains.iter().map(|&d| outer / counts[d] as f64).collect()
}

/// Weight-supervision term of the weighted loss.
pub fn weight_supervision(
    weights: &[PromptWeights],
    domains: &[usize],
    num_domains: usize,
    norm: WeightNorm,
) -> Result<f64> {
    if weights.len() != domains.len() {
        return Err(PldgError::Argument("weights and domains are not aligned".into()));
    }
    if let Some(&d) = domains.iter().find(|&&d| d >= num_domains) {
        return Err(PldgError::Argument(format!("domain {d} outside 0..{num_domains}")));
    }
    let coef = supervision_coefficients(domains, num_domains, norm);
    Ok(weights
        .iter()
        .zip(domains)
        .zip(&coef)
        .map(|((w, &d), c)| c * supervision_bracket(w.values(), d).0)
        .sum())
}

/// Sum of per-sample gradients for one chunk of a batch.
struct ChunkAcc {
    loss: f64,
    aux: f64,
    encoder: EncoderParams,
    d_prompts: Vec<Array2<f64>>,
    adapter: Option<AdapterParams>,
    weights: Vec<PromptWeights>,
}

impl ChunkAcc {
    fn new(model: &PldgModel) -> Self {
        let (s, d) = model
            .prompts
            .as_ref()
            .map_or((0, 0), |p| (p.prompt_len(), p.dim()));
        ChunkAcc {
            loss: 0.0,
            aux: 0.0,
            encoder: model.encoder.params.zeros_like(),
            d_prompts: vec![Array2::zeros((s, d)); model.num_domains()],
            adapter: model.adapter.as_ref().map(|a| a.zeros_like()),
            weights: Vec::new(),
        }
    }
}

/// Runs `per_sample` over fixed chunks and merges the chunk results in order.
fn run_chunks<T: Sync>(
    model: &PldgModel,
    items: &[T],
    per_sample: impl Fn(usize, &T, &mut ChunkAcc) -> Result<()> + Sync + Send,
) -> Result<ChunkAcc> {
    let parts = util::map_chunks(items, CHUNK, |offset, chunk| {
        let mut acc = ChunkAcc::new(model);
        for (k, item) in chunk.iter().enumerate() {
            per_sample(offset + k, item, &mut acc)?;
        }
        Ok::<_, PldgError>(acc)
    });
    let mut total = ChunkAcc::new(model);
    for part in parts {
        let part: ChunkAcc = part?;
        total.loss += part.loss;
        total.aux += part.aux;
        total.encoder.add_assign(&part.encoder);
        for (a, b) in total.d_prompts.iter_mut().zip(&part.d_prompts) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (total.adapter.as_mut(), part.adapter.as_ref()) {
            a.add_assign(b);
        }
        total.weights.extend(part.weights);
    }
    Ok(total)
}

fn fold_into(model: &PldgModel, acc: &ChunkAcc, grads: &mut ModelGrads) {
    grads.encoder.add_assign(&acc.encoder);
    if let (Some(bank), Some(gb)) = (model.prompts.as_ref(), grads.prompts.as_mut()) {
        for (m, dp) in acc.d_prompts.iter().enumerate() {
            if dp.iter().any(|&v| v != 0.0) {
                bank.backward(m, dp, gb);
            }
        }
    }
    if let (Some(a), Some(ga)) = (acc.adapter.as_ref(), grads.adapter.as_mut()) {
        ga.add_assign(a);
    }
}

/// Dropout stream for one sample of one loss term; `None` disables dropout.
#[derive(Debug, Clone, Copy)]
pub struct DropoutSeed(pub Option<u64>);

impl DropoutSeed {
    fn rng(&self, term: u64, index: usize) -> Option<util::Rng> {
        self.0.map(|s| rng_for(s, &[term, index as u64]))
    }
}

/// Plain cross-entropy without prompts.
pub fn erm_term(
    model: &PldgModel,
    batch: &Batch<'_>,
    dropout: DropoutSeed,
    grads: Option<&mut ModelGrads>,
) -> Result<f64> {
    batch.check(model.encoder.num_classes())?;
    let scale = 1.0 / batch.len() as f64;
    let want = grads.is_some();
    let acc = run_chunks(model, &batch.images, |i, img, acc| {
        let mut rng = dropout.rng(1, i);
        let trace = model.encoder.trace(img, None, rng.as_mut())?;
        let (loss, d) = cross_entropy(trace.logits.view(), batch.labels[i]);
        acc.loss += loss;
        if want {
            model.encoder.backward(&trace, &(d * scale), None, &mut acc.encoder);
        }
        Ok(())
    })?;
    if let Some(g) = grads {
        fold_into(model, &acc, g);
    }
    Ok(acc.loss * scale)
}

/// Cross-entropy of each image under its own pseudo-domain's prompt.
pub fn domain_term(
    model: &PldgModel,
    batch: &Batch<'_>,
    dropout: DropoutSeed,
    grads: Option<&mut ModelGrads>,
) -> Result<f64> {
    batch.check(model.encoder.num_classes())?;
    let prompts = model.bank()?.generate_all();
    check_domains(&batch.domains, prompts.len())?;
    let scale = 1.0 / batch.len() as f64;
    let want = grads.is_some();
    let acc = run_chunks(model, &batch.images, |i, img, acc| {
        let m = batch.domains[i];
        let mut rng = dropout.rng(2, i);
        let trace = model.encoder.trace(img, Some(prompts[m].view()), rng.as_mut())?;
        let (loss, d) = cross_entropy(trace.logits.view(), batch.labels[i]);
        acc.loss += loss;
        if want {
            if let Some(dp) = model.encoder.backward(&trace, &(d * scale), None, &mut acc.encoder) {
                acc.d_prompts[m] += &dp;
            }
        }
        Ok(())
    })?;
    if let Some(g) = grads {
        fold_into(model, &acc, g);
    }
    Ok(acc.loss * scale)
}

fn check_domains(domains: &[usize], m: usize) -> Result<()> {
    if let Some(&d) = domains.iter().find(|&&d| d >= m) {
        return Err(PldgError::Argument(format!("domain {d} outside 0..{m}")));
    }
    Ok(())
}

/// Mixed images through the dominant sample's prompt, with mixed labels.
pub fn mixup_term(
    model: &PldgModel,
    samples: &[MixupSample],
    dropout: DropoutSeed,
    grads: Option<&mut ModelGrads>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(PldgError::Argument("no mixup samples".into()));
    }
    let c = model.encoder.num_classes();
    let prompts = model.bank()?.generate_all();
    let scale = 1.0 / samples.len() as f64;
    let want = grads.is_some();
    let acc = run_chunks(model, samples, |i, s, acc| {
        check_labels(&[s.y_i, s.y_j], c)?;
        check_domains(&[s.domain_i], prompts.len())?;
        let mut rng = dropout.rng(3, i);
        let trace = model
            .encoder
            .trace(&s.x_mix, Some(prompts[s.domain_i].view()), rng.as_mut())?;
        let (loss, d) = soft_cross_entropy(
            trace.logits.view(),
            &[(s.y_i, s.lambda), (s.y_j, 1.0 - s.lambda)],
        );
        acc.loss += loss;
        if want {
            if let Some(dp) = model.encoder.backward(&trace, &(d * scale), None, &mut acc.encoder) {
                acc.d_prompts[s.domain_i] += &dp;
            }
        }
        Ok(())
    })?;
    if let Some(g) = grads {
        fold_into(model, &acc, g);
    }
    Ok(acc.loss * scale)
}

/// Output of [`weighted_term`].
#[derive(Debug, Clone)]
pub struct WeightedOutput {
    pub ce: f64,
    pub supervision: f64,
    pub weights: Vec<PromptWeights>,
}

/// The simulated-inference loss: cross-entropy under the adapter-weighted
/// prompt plus `lambda_w` times the weight supervision.
pub fn weighted_term(
    model: &PldgModel,
    batch: &Batch<'_>,
    lambda_w: f64,
    norm: WeightNorm,
    dropout: DropoutSeed,
    grads: Option<&mut ModelGrads>,
) -> Result<WeightedOutput> {
    batch.check(model.encoder.num_classes())?;
    let adapter = model.adapter()?;
    // domain prompts are constants on this path
    let prompts = model.bank()?.generate_all();
    let m = prompts.len();
    check_domains(&batch.domains, m)?;
    let coef = supervision_coefficients(&batch.domains, m, norm);
    let scale = 1.0 / batch.len() as f64;
    let want = grads.is_some();
    let acc = run_chunks(model, &batch.images, |i, img, acc| {
        let feature = model.encoder.trace(img, None, None)?.cls_feature;
        let at = adapter.trace(feature.view())?;
        let prompt = combine_prompts(&prompts, &at.weights);
        let mut rng = dropout.rng(4, i);
        let trace = model.encoder.trace(img, Some(prompt.view()), rng.as_mut())?;
        let (ce, d) = cross_entropy(trace.logits.view(), batch.labels[i]);
        let (bracket, d_bracket) = supervision_bracket(&at.weights, batch.domains[i]);
        acc.loss += ce;
        acc.aux += coef[i] * bracket;
        if want {
            let dp = model
                .encoder
                .backward(&trace, &(d * scale), None, &mut acc.encoder)
                .expect("prompted trace");
            let mut d_w: Array1<f64> = prompts.iter().map(|p| (&dp * p).sum()).collect();
            d_w.scaled_add(lambda_w * coef[i], &d_bracket);
            adapter.backward(&at, &d_w, acc.adapter.as_mut().expect("adapter grads"));
        }
        acc.weights.push(PromptWeights::new(at.weights)?);
        Ok(())
    })?;
    if let Some(g) = grads {
        fold_into(model, &acc, g);
    }
    Ok(WeightedOutput {
        ce: acc.loss * scale,
        supervision: acc.aux,
        weights: acc.weights,
    })
}

/// Loss terms of one step. `mixup_loss` holds the first term of the total:
/// the mixup loss, or the domain loss when mixup is off, or the plain
/// cross-entropy when prompts are off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mixup_loss: f64,
    pub weighted_ce: f64,
    pub weight_supervision: f64,
    pub lambda_w: f64,
    pub total: f64,
}

/// Sums the parts into a breakdown, rejecting non-finite components.
pub fn total_loss(
    first: f64,
    weighted_ce: f64,
    weight_supervision: f64,
    lambda_w: f64,
) -> Result<LossBreakdown> {
    for (name, v) in [
        ("mixup_loss", first),
        ("weighted_ce", weighted_ce),
        ("weight_supervision", weight_supervision),
    ] {
        if !v.is_finite() {
            return Err(PldgError::Training(format!("{name} is not finite ({v})")));
        }
    }
    Ok(LossBreakdown {
        mixup_loss: first,
        weighted_ce,
        weight_supervision,
        lambda_w,
        total: first + weighted_ce + lambda_w * weight_supervision,
    })
}

/// Full objective for one batch under the configured toggles.
///
/// `mixups` must be provided when the mixup toggle is on. Gradients are
/// returned when `with_grads` is set.
pub fn compute_loss(
    model: &PldgModel,
    batch: &Batch<'_>,
    mixups: Option<&[MixupSample]>,
    cfg: &LossConfig,
    dropout: DropoutSeed,
    with_grads: bool,
) -> Result<(LossBreakdown, Option<ModelGrads>)> {
    cfg.toggles.validate()?;
    let mut grads = with_grads.then(|| model.zero_grads());
    let t = cfg.toggles;
    let first = if !t.prompts {
        erm_term(model, batch, dropout, grads.as_mut())?
    } else if t.mixup {
        let samples = mixups.ok_or_else(|| {
            PldgError::Argument("mixup toggle is on but no mixed samples were given".into())
        })?;
        mixup_term(model, samples, dropout, grads.as_mut())?
    } else {
        domain_term(model, batch, dropout, grads.as_mut())?
    };
    let (wce, sup) = if t.prompts && t.adapter {
        let out = weighted_term(model, batch, cfg.lambda_w, cfg.weight_norm, dropout, grads.as_mut())?;
        (out.ce, out.supervision)
    } else {
        (0.0, 0.0)
    };
    let breakdown = total_loss(first, wce, sup, cfg.lambda_w)?;
    if let Some(g) = &grads {
        if !g.is_finite() {
            return Err(PldgError::Training("gradient is not finite".into()));
        }
    }
    Ok((breakdown, grads))
}
