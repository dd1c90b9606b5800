use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{frechet_distance, spearman};
use crate::data::Dataset;
use crate::discovery::PseudoDomainAssignment;
use crate::error::{PldgError, Result};
use crate::objectives::PldgModel;
use crate::prompts::adapter_weights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDistanceRow {
    pub domain: usize,
    pub frechet: f64,
    pub mean_weight: f64,
}

/// Per-domain distance to a target set next to the adapter's average weight
/// on that domain's prompt for the target samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDistanceReport {
    pub rows: Vec<DomainDistanceRow>,
    /// Spearman correlation of distance against weight; `None` below three domains
    /// or when either column is constant.
    pub spearman: Option<f64>,
}

impl DomainDistanceReport {
    pub fn argmax_weight_domain(&self) -> Option<usize> {
        self.rows
            .iter()
            .max_by(|a, b| a.mean_weight.total_cmp(&b.mean_weight))
            .map(|r| r.domain)
    }

    pub fn min_distance_domain(&self) -> Option<usize> {
        self.rows
            .iter()
            .min_by(|a, b| a.frechet.total_cmp(&b.frechet))
            .map(|r| r.domain)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["domain", "frechet", "mean_weight"])?;
        for r in &self.rows {
            out.write_record([
                r.domain.to_string(),
                r.frechet.to_string(),
                r.mean_weight.to_string(),
            ])?;
        }
        out.flush().map_err(|e| PldgError::io("<distance csv>", e))?;
        Ok(())
    }
}

/// Compares every pseudo-domain of `source` with `target` using final-layer
/// prompt-free class-token features.
pub fn analyze_prompt_weights(
    model: &PldgModel,
    source: &Dataset,
    assignment: &PseudoDomainAssignment,
    target: &Dataset,
) -> Result<DomainDistanceReport> {
    let adapter = model
        .adapter
        .as_ref()
        .ok_or_else(|| PldgError::Config("adapter not present in this checkpoint".into()))?;
    let domains = assignment.aligned(source)?;
    let m = adapter.num_domains();
    let (src, _) = model.encoder.forward_plain(&source.pixels())?;
    let (tgt, _) = model.encoder.forward_plain(&target.pixels())?;
    let weights = adapter_weights(adapter, &tgt)?;

    let mut rows = Vec::with_capacity(m);
    for d in 0..m {
        let idx: Vec<usize> = (0..domains.len()).filter(|&i| domains[i] == d).collect();
        let feats = Array2::from_shape_fn((idx.len(), src.ncols()), |(r, c)| src[(idx[r], c)]);
        let frechet = frechet_distance(feats.view(), tgt.view())
            .map_err(|e| PldgError::Data(format!("pseudo-domain {d}: {e}")))?;
        let mean_weight =
            weights.iter().map(|w| w.values()[d]).sum::<f64>() / weights.len().max(1) as f64;
        rows.push(DomainDistanceRow {
            domain: d,
            frechet,
            mean_weight,
        });
    }
    let spearman = if m >= 3 {
        let dist: Vec<f64> = rows.iter().map(|r| r.frechet).collect();
        let w: Vec<f64> = rows.iter().map(|r| r.mean_weight).collect();
        spearman(&dist, &w)?
    } else {
        None
    };
    Ok(DomainDistanceReport { rows, spearman })
}
