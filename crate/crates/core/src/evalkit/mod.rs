//! Evaluation: ROC-AUC and accuracy, Gaussian Frechet distance, the
//! distance-versus-prompt-weight analysis, report CSVs and PNG charts.

mod analysis;
mod font;
mod frechet;
mod metrics;
pub mod plot;

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{PldgError, Result};

pub use analysis::{analyze_prompt_weights, DomainDistanceReport, DomainDistanceRow};
pub use frechet::{frechet_distance, gaussian_frechet, COV_RIDGE};
pub use metrics::{accuracy, argmax_rows, average_ranks, roc_auc, roc_auc_macro, spearman};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    RocAuc,
    Accuracy,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::RocAuc => "roc_auc",
            MetricKind::Accuracy => "accuracy",
        }
    }

    /// Scores a `n × C` probability matrix against labels.
    pub fn score(&self, scores: &Array2<f64>, labels: &[usize]) -> Result<f64> {
        match self {
            MetricKind::RocAuc => roc_auc_macro(scores, labels),
            MetricKind::Accuracy => accuracy(&argmax_rows(scores), labels),
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = PldgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roc_auc" => Ok(MetricKind::RocAuc),
            "accuracy" => Ok(MetricKind::Accuracy),
            other => Err(PldgError::Config(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub metric: MetricKind,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn new(dataset: impl Into<String>, metric: MetricKind, value: f64, n: usize, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(PldgError::Consistency(format!("metric value {value} outside [0, 1]")));
        }
        Ok(MetricReport {
            dataset: dataset.into(),
            metric,
            value,
            n,
            seed,
        })
    }
}

/// Writes `dataset,metric,value,n,seed`.
pub fn write_metrics_csv<W: Write>(reports: &[MetricReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["dataset", "metric", "value", "n", "seed"])?;
    for r in reports {
        out.write_record([
            r.dataset.clone(),
            r.metric.name().to_string(),
            r.value.to_string(),
            r.n.to_string(),
            r.seed.to_string(),
        ])?;
    }
    out.flush().map_err(|e| PldgError::io("metrics csv", e))?;
    Ok(())
}
