//! Experiment drivers shared by the command line and the acceptance suite:
//! the bias sweep, the component ablation, the distance-versus-weight study
//! and the clustering diagnostics.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{generate_style_mixture, generate_trap, Artifact, Dataset, TrapSpec, TrapSplits};
use crate::discovery::{nmi, DiagnosticRow};
use crate::error::{PldgError, Result};
use crate::evalkit::{analyze_prompt_weights, plot::Series, DomainDistanceReport, MetricKind, MetricReport};
use crate::objectives::Toggles;
use crate::trainer::{evaluate, fit, Quiet, TrainConfig, TrainData};

/// The six bias levels of the trap protocol.
pub const TRAP_RHOS: [f64; 6] = [0.0, 0.3, 0.5, 0.7, 0.9, 1.0];

/// A named training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub name: String,
    pub config: TrainConfig,
}

impl Method {
    pub fn new(name: impl Into<String>, config: TrainConfig) -> Self {
        Method {
            name: name.into(),
            config,
        }
    }

    /// The same base configuration with different component toggles.
    pub fn ablation(base: &TrainConfig, toggles: Toggles) -> Self {
        Method::new(
            toggles.label(),
            TrainConfig {
                toggles,
                ..base.clone()
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub rhos: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Base trap recipe; `rho` and `seed` are replaced per run.
    pub trap: TrapSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub rho: f64,
    pub seed: u64,
    pub ood_auc: f64,
    pub id_auc: f64,
    pub selected_epoch: usize,
    pub n_ood: usize,
    pub n_id: usize,
}

/// Trains one method on one trap set and scores it on both test splits.
pub fn run_on_trap(method: &Method, splits: &TrapSplits, rho: f64, seed: u64) -> Result<RunResult> {
    let cfg = TrainConfig {
        seed,
        ..method.config.clone()
    };
    let (ck, _) = fit(
        &cfg,
        TrainData {
            train: &splits.train,
            val: &splits.val,
            val_ood: None,
        },
        &mut Quiet,
    )?;
    Ok(RunResult {
        method: method.name.clone(),
        rho,
        seed,
        ood_auc: evaluate(&ck.model, &splits.test_ood, MetricKind::RocAuc)?,
        id_auc: evaluate(&ck.model, &splits.test_id, MetricKind::RocAuc)?,
        selected_epoch: ck.epoch,
        n_ood: splits.test_ood.len(),
        n_id: splits.test_id.len(),
    })
}

/// Every method on every (rho, seed) trap set. The trap set for a pair is
/// generated once and shared by all methods.
pub fn sweep(spec: &SweepSpec, on_result: &mut dyn FnMut(&RunResult)) -> Result<Vec<RunResult>> {
    if spec.methods.is_empty() || spec.rhos.is_empty() || spec.seeds.is_empty() {
        return Err(PldgError::Config("sweep needs methods, rhos and seeds".into()));
    }
    let mut out = Vec::new();
    for &rho in &spec.rhos {
        for &seed in &spec.seeds {
            let splits = generate_trap(&TrapSpec {
                rho,
                seed,
                ..spec.trap.clone()
            })?;
            for m in &spec.methods {
                let r = run_on_trap(m, &splits, rho, seed)?;
                on_result(&r);
                out.push(r);
            }
        }
    }
    Ok(out)
}

/// Per-run metric rows, dataset named `{method}/rho={rho}/{split}`.
pub fn metric_reports(results: &[RunResult]) -> Result<Vec<MetricReport>> {
    let mut out = Vec::with_capacity(results.len() * 2);
    for r in results {
        out.push(MetricReport::new(
            format!("{}/rho={}/test_ood", r.method, r.rho),
            MetricKind::RocAuc,
            r.ood_auc,
            r.n_ood,
            r.seed,
        )?);
        out.push(MetricReport::new(
            format!("{}/rho={}/test_id", r.method, r.rho),
            MetricKind::RocAuc,
            r.id_auc,
            r.n_id,
            r.seed,
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub method: String,
    pub rho: f64,
    pub mean_ood_auc: f64,
    pub std_ood_auc: f64,
    pub mean_id_auc: f64,
    pub n: usize,
}

/// Seed-wise mean and standard deviation per (method, rho), in first-seen
/// method order and ascending rho.
pub fn summarize(results: &[RunResult]) -> Vec<SweepSummary> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, u64), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        let idx = match order.iter().position(|m| *m == r.method) {
            Some(i) => i,
            None => {
                order.push(r.method.clone());
                order.len() - 1
            }
        };
        groups.entry((idx, r.rho.to_bits())).or_default().push(r);
    }
    let mut out: Vec<SweepSummary> = groups
        .into_iter()
        .map(|((idx, _), rs)| {
            let n = rs.len() as f64;
            let mean = rs.iter().map(|r| r.ood_auc).sum::<f64>() / n;
            let var = rs.iter().map(|r| (r.ood_auc - mean).powi(2)).sum::<f64>() / n;
            SweepSummary {
                method: order[idx].clone(),
                rho: rs[0].rho,
                mean_ood_auc: mean,
                std_ood_auc: var.sqrt(),
                mean_id_auc: rs.iter().map(|r| r.id_auc).sum::<f64>() / n,
                n: rs.len(),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        let ia = order.iter().position(|m| *m == a.method);
        let ib = order.iter().position(|m| *m == b.method);
        ia.cmp(&ib).then(a.rho.total_cmp(&b.rho))
    });
    out
}

pub fn find_summary<'a>(summary: &'a [SweepSummary], method: &str, rho: f64) -> Option<&'a SweepSummary> {
    summary.iter().find(|s| s.method == method && s.rho == rho)
}

/// Writes `method,rho,mean_ood_auc,std_ood_auc,mean_id_auc,n`.
pub fn write_summary_csv<W: Write>(summary: &[SweepSummary], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in summary {
        out.serialize(s)?;
    }
    out.flush().map_err(|e| PldgError::io("summary csv", e))?;
    Ok(())
}

/// One line per method: mean OOD AUC against rho.
pub fn sweep_series(summary: &[SweepSummary]) -> Vec<Series> {
    let mut series: Vec<Series> = Vec::new();
    for s in summary {
        match series.iter_mut().find(|x| x.name == s.method) {
            Some(x) => x.points.push((s.rho, s.mean_ood_auc)),
            None => series.push(Series {
                name: s.method.clone(),
                points: vec![(s.rho, s.mean_ood_auc)],
            }),
        }
    }
    series
}

/// Source/target data for the distance-versus-weight study: training images
/// split evenly over "no artifact" plus three artifacts, and a target set
/// carrying only `target_style`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSetup {
    pub artifacts: Vec<Artifact>,
    pub target_style: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_target: usize,
}

impl Default for DistanceSetup {
    fn default() -> Self {
        DistanceSetup {
            artifacts: vec![Artifact::ColorTint, Artifact::StripeRuler, Artifact::CornerPatch],
            target_style: 2,
            n_train: 480,
            n_val: 96,
            n_target: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceStudy {
    pub report: DomainDistanceReport,
    /// The planted style that dominates each pseudo-domain.
    pub domain_styles: Vec<usize>,
    pub target_style: usize,
    /// NMI between the pseudo-domains and the planted styles.
    pub style_nmi: f64,
}

/// Trains on the style mixture and relates each pseudo-domain's distance to
/// the target with the adapter's weight on that domain's prompt.
pub fn distance_study(cfg: &TrainConfig, setup: &DistanceSetup, seed: u64) -> Result<DistanceStudy> {
    let size = cfg.encoder.image_size;
    let c = cfg.encoder.num_classes;
    let styles: Vec<usize> = (0..=setup.artifacts.len()).collect();
    let train = generate_style_mixture("train", &setup.artifacts, &styles, setup.n_train, size, c, seed)?;
    let val = generate_style_mixture("val", &setup.artifacts, &styles, setup.n_val, size, c, seed)?;
    let target = generate_style_mixture(
        "target",
        &setup.artifacts,
        &[setup.target_style],
        setup.n_target,
        size,
        c,
        seed,
    )?;
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let (ck, _) = fit(
        &cfg,
        TrainData {
            train: &train,
            val: &val,
            val_ood: None,
        },
        &mut Quiet,
    )?;
    let assignment = ck
        .assignment
        .as_ref()
        .ok_or_else(|| PldgError::Config("distance study needs a prompted run".into()))?;
    let report = analyze_prompt_weights(&ck.model, &train, assignment, &target)?;
    let domains = assignment.aligned(&train)?;
    let styles = train.given_domains().unwrap_or_default();
    Ok(DistanceStudy {
        report,
        domain_styles: dominant_labels(&domains, &train, cfg.num_domains),
        target_style: setup.target_style,
        style_nmi: nmi(&domains, &styles)?,
    })
}

fn dominant_labels(domains: &[usize], data: &Dataset, m: usize) -> Vec<usize> {
    let styles = data.given_domains().unwrap_or_else(|| vec![0; data.len()]);
    (0..m)
        .map(|d| {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for (i, &dom) in domains.iter().enumerate() {
                if dom == d {
                    *counts.entry(styles[i]).or_default() += 1;
                }
            }
            counts
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map_or(0, |(s, _)| s)
        })
        .collect()
}

/// Trains through the clustering epoch while clustering `layers` after
/// every epoch, and returns the diagnostic rows.
pub fn clustering_diagnostics(cfg: &TrainConfig, trap: &TrapSpec, layers: Vec<usize>) -> Result<Vec<DiagnosticRow>> {
    let splits = generate_trap(trap)?;
    let cfg = TrainConfig {
        diagnostics_layers: layers,
        epochs: cfg.cluster_epoch + 1,
        ..cfg.clone()
    };
    let (_, history) = fit(
        &cfg,
        TrainData {
            train: &splits.train,
            val: &splits.val,
            val_ood: None,
        },
        &mut Quiet,
    )?;
    Ok(history.diagnostics)
}
