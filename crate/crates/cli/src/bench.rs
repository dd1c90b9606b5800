use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use pldg::data::{Artifact, TrapSpec};
use pldg::evalkit::plot::{bar_pair, line_chart, save_png};
use pldg::evalkit::{spearman, write_metrics_csv, DomainDistanceReport, DomainDistanceRow};
use pldg::experiments::{
    find_summary, metric_reports, summarize, sweep, sweep_series, write_summary_csv, Method, SweepSpec, SweepSummary,
};
use pldg::objectives::Toggles;
use pldg::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::config::{resolve, to_toml};
use crate::error::{runtime, usage, CliResult};
use crate::output::{out_path, OutFile, RunDir};
use crate::ConfigArgs;

/// The benchmark: ERM (all toggles off) against `method` on one trap recipe
/// over every bias level and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub rhos: Vec<f64>,
    pub seeds: Vec<u64>,
    pub method: TrainConfig,
    pub trap: TrapSpec,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            rhos: vec![0.0, 0.5, 1.0],
            seeds: vec![0, 1, 2],
            method: TrainConfig::pldg_small(),
            trap: TrapSpec {
                artifacts: vec![Artifact::CurveHair],
                image_size: 16,
                n_train: 600,
                n_val: 200,
                n_test_id: 200,
                n_test_ood: 400,
                ..TrapSpec::default()
            },
        }
    }
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Training preset for the compared method (default pldg-small).
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Output directory (default `$PLDG_RUN_ROOT/bench`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

pub fn bench_config(preset: Option<&str>, cfg: &ConfigArgs) -> CliResult<BenchConfig> {
    let mut base = BenchConfig::default();
    if let Some(p) = preset {
        base.method = TrainConfig::preset(p)?;
        base.trap.image_size = base.method.encoder.image_size;
    }
    let bench: BenchConfig = resolve(&base, cfg.config.as_deref(), &cfg.sets)?;
    bench.method.validate()?;
    bench.trap.validate()?;
    if bench.rhos.is_empty() || bench.seeds.is_empty() {
        return Err(usage("bench needs at least one rho and one seed"));
    }
    if bench.trap.image_size != bench.method.encoder.image_size {
        return Err(usage(format!(
            "trap.image_size {} does not match method.encoder.image_size {}",
            bench.trap.image_size, bench.method.encoder.image_size
        )));
    }
    Ok(bench)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn run(args: BenchArgs) -> CliResult<()> {
    let bench = bench_config(args.preset.as_deref(), &args.cfg)?;
    let dir = RunDir::open(&out_path(args.out, "bench"), args.force)?;
    fs::write(dir.file("bench.toml"), to_toml(&bench)?).map_err(|e| runtime(e.to_string()))?;

    let erm = Method::new(
        "erm",
        TrainConfig {
            toggles: Toggles::NONE,
            ..bench.method.clone()
        },
    );
    let method = Method::new("pldg", bench.method.clone());
    let spec = SweepSpec {
        rhos: bench.rhos.clone(),
        seeds: bench.seeds.clone(),
        methods: vec![erm, method],
        trap: bench.trap.clone(),
    };
    let results = sweep(&spec, &mut |r| {
        eprintln!(
            "{:>5} rho {:.1} seed {}: ood {:.4} id {:.4} (epoch {})",
            r.method, r.rho, r.seed, r.ood_auc, r.id_auc, r.selected_epoch
        )
    })?;
    write_metrics_csv(&metric_reports(&results)?, create(&dir.file("metrics.csv"))?)?;
    let summary = summarize(&results);
    write_summary_csv(&summary, create(&dir.file("summary.csv"))?)?;
    save_png(
        &line_chart("OOD AUC under increasing bias", "rho", "OOD AUC", &sweep_series(&summary))?,
        &dir.file("sweep.png"),
    )?;

    println!("{:>6} {:>6} {:>10} {:>8} {:>10}", "method", "rho", "ood_auc", "std", "id_auc");
    for s in &summary {
        println!(
            "{:>6} {:>6.1} {:>10.4} {:>8.4} {:>10.4}",
            s.method, s.rho, s.mean_ood_auc, s.std_ood_auc, s.mean_id_auc
        );
    }
    let lo = bench.rhos.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = bench.rhos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if let (Some(e0), Some(e1), Some(p0), Some(p1)) = (
        find_summary(&summary, "erm", lo),
        find_summary(&summary, "erm", hi),
        find_summary(&summary, "pldg", lo),
        find_summary(&summary, "pldg", hi),
    ) {
        println!(
            "rho={hi}: pldg - erm = {:+.4}; drop from rho={lo}: erm {:.4}, pldg {:.4}",
            p1.mean_ood_auc - e1.mean_ood_auc,
            e0.mean_ood_auc - e1.mean_ood_auc,
            p0.mean_ood_auc - p1.mean_ood_auc
        );
    }
    println!("wrote {}", dir.path.display());
    Ok(())
}

// ------------------------------------------------------------------- plot

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// Mean OOD AUC against rho from a bench `summary.csv`.
    Sweep,
    /// Frechet distance and mean weight per domain from an analyze CSV.
    Distances,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    pub kind: PlotKind,
    /// Input CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Output PNG (default `$PLDG_RUN_ROOT/<kind>.png`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn plot(args: PlotArgs) -> CliResult<()> {
    let default = match args.kind {
        PlotKind::Sweep => "sweep.png",
        PlotKind::Distances => "distances.png",
    };
    let img = match args.kind {
        PlotKind::Sweep => {
            let summary: Vec<SweepSummary> = read_rows(&args.input)?;
            if summary.is_empty() {
                return Err(usage(format!("{} has no rows", args.input.display())));
            }
            line_chart("OOD AUC under increasing bias", "rho", "OOD AUC", &sweep_series(&summary))?
        }
        PlotKind::Distances => {
            let rows: Vec<DomainDistanceRow> = read_rows(&args.input)?;
            if rows.is_empty() {
                return Err(usage(format!("{} has no rows", args.input.display())));
            }
            let d: Vec<f64> = rows.iter().map(|r| r.frechet).collect();
            let w: Vec<f64> = rows.iter().map(|r| r.mean_weight).collect();
            let spearman = if rows.len() >= 3 { spearman(&d, &w)? } else { None };
            bar_pair(&DomainDistanceReport { rows, spearman })?
        }
    };
    let out = OutFile::open(&out_path(args.out, default), args.force)?;
    save_png(&img, &out.path)?;
    println!("wrote {}", out.path.display());
    Ok(())
}
