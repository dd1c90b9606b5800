//! Domain prompts and the adapter that blends them for unseen domains.

mod adapter;
mod generator;

use std::io::Write;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{PldgError, Result};

pub use adapter::{AdapterParams, AdapterTrace};
pub use generator::{IndependentPrompts, PromptBank, PromptGenerator};

/// Tolerance on `Σ w = 1` accepted by [`weighted_prompt`].
pub const SIMPLEX_TOL: f64 = 1e-5;

/// A point on the probability simplex over the domain prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptWeights(Array1<f64>);

impl PromptWeights {
    pub fn new(w: Array1<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(PldgError::Argument(format!("weights {w} are not non-negative")));
        }
        let sum = w.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(PldgError::Argument(format!("weights sum to {sum}, not 1")));
        }
        Ok(PromptWeights(w))
    }

    pub fn uniform(m: usize) -> Self {
        PromptWeights(Array1::from_elem(m, 1.0 / m as f64))
    }

    pub fn one_hot(m: usize, k: usize) -> Self {
        let mut w = Array1::zeros(m);
        w[k] = 1.0;
        PromptWeights(w)
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0
    }
}

/// Adapter weights for each row of a `B × d` prompt-free feature matrix.
pub fn adapter_weights(adapter: &AdapterParams, features: &Array2<f64>) -> Result<Vec<PromptWeights>> {
    features
        .rows()
        .into_iter()
        .map(|row| Ok(PromptWeights(adapter.trace(row)?.weights)))
        .collect()
}

/// `Σ_m w_m P^m` over precomputed domain prompts. Zero weights are skipped,
/// so a one-hot `w` returns the selected prompt bit for bit.
pub fn combine_prompts(prompts: &[Array2<f64>], w: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(prompts[0].dim());
    for (p, &wm) in prompts.iter().zip(w.iter()) {
        if wm != 0.0 {
            out.scaled_add(wm, p);
        }
    }
    out
}

/// The weighted prompt for `w`, built from freshly generated domain prompts.
pub fn weighted_prompt(bank: &PromptBank, w: &Array1<f64>) -> Result<Array2<f64>> {
    if w.len() != bank.num_domains() {
        return Err(PldgError::Argument(format!(
            "{} weights for {} domains",
            w.len(),
            bank.num_domains()
        )));
    }
    let w = PromptWeights::new(w.clone())?;
    Ok(combine_prompts(&bank.generate_all(), w.values()))
}

/// Per-domain mean and standard deviation of adapter weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightStats {
    pub domain: usize,
    pub weight_mean: f64,
    pub weight_std: f64,
}

pub fn weight_stats(weights: &[PromptWeights]) -> Vec<WeightStats> {
    let Some(first) = weights.first() else {
        return Vec::new();
    };
    let n = weights.len() as f64;
    (0..first.len())
        .map(|m| {
            let mean = weights.iter().map(|w| w.0[m]).sum::<f64>() / n;
            let var = weights.iter().map(|w| (w.0[m] - mean).powi(2)).sum::<f64>() / n;
            WeightStats {
                domain: m,
                weight_mean: mean,
                weight_std: var.sqrt(),
            }
        })
        .collect()
}

/// Writes `domain,weight_mean,weight_std`.
pub fn write_weight_stats_csv<W: Write>(stats: &[WeightStats], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in stats {
        out.serialize(s)?;
    }
    out.flush().map_err(|e| PldgError::io("weight stats csv", e))?;
    Ok(())
}

/// Writes every domain prompt as `domain,row,col,value`.
pub fn write_prompts_csv<W: Write>(bank: &PromptBank, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["domain", "row", "col", "value"])?;
    for (m, p) in bank.generate_all().iter().enumerate() {
        for ((i, j), v) in p.indexed_iter() {
            out.write_record([m.to_string(), i.to_string(), j.to_string(), format!("{v}")])?;
        }
    }
    out.flush().map_err(|e| PldgError::io("prompt csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests;
