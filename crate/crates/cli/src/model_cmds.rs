//! Commands that train or read a checkpoint.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::Args;
use pldg::data::{load_split, Dataset};
use pldg::discovery::{
    cluster_features, collect_style_features, export_features_csv, nmi, write_diagnostics_csv, AssignmentSlot,
    ClusteringConfig, DiagnosticRow, PseudoDomainAssignment,
};
use pldg::evalkit::{analyze_prompt_weights, write_metrics_csv, MetricKind, MetricReport};
use pldg::objectives::{PldgModel, Toggles};
use pldg::prompts::{weight_stats, write_prompts_csv, write_weight_stats_csv};
use pldg::trainer::{
    fit, predict, write_training_log_csv, Checkpoint, EpochRecord, Selection, StepRecord, TrainConfig, TrainData,
    TrainObserver,
};

use crate::config::{resolve, to_toml};
use crate::error::{runtime, usage, CliResult};
use crate::output::{out_path, OutFile, RunDir};
use crate::ConfigArgs;

pub const DEFAULT_PRESET: &str = "pldg-desk";

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint {} not found", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn load(dir: &Path, split: &str, cfg: &TrainConfig) -> CliResult<Dataset> {
    if !dir.join("manifest.csv").is_file() {
        return Err(usage(format!("{} has no manifest.csv", dir.display())));
    }
    Ok(load_split(dir, split, cfg.encoder.image_size, cfg.encoder.num_classes)?)
}

fn dataset_label(dir: &Path, split: &str) -> String {
    let name = dir
        .file_name()
        .map_or_else(|| "data".to_string(), |n| n.to_string_lossy().into_owned());
    format!("{name}/{split}")
}

// ------------------------------------------------------------------ train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory with `manifest.csv` (train and val splits).
    #[arg(long)]
    pub data: PathBuf,
    /// Base preset: pldg-desk, erm, vitb16, pldg-small, erm-small.
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Component toggles as a label such as `+P+A` or `baseline`.
    #[arg(long)]
    pub toggles: Option<String>,
    /// Shorthand for `--toggles baseline`.
    #[arg(long = "toggles.none", conflicts_with = "toggles")]
    pub toggles_none: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Split used for OOD-validation selection.
    #[arg(long, default_value = "test_ood")]
    pub ood_val_split: String,
    /// Run directory (default `$PLDG_RUN_ROOT/train`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    #[arg(short, long)]
    pub quiet: bool,
}

pub fn train_config(preset: Option<&str>, cfg: &ConfigArgs) -> CliResult<TrainConfig> {
    let base = TrainConfig::preset(preset.unwrap_or(DEFAULT_PRESET))?;
    let cfg: TrainConfig = resolve(&base, cfg.config.as_deref(), &cfg.sets)?;
    cfg.validate()?;
    Ok(cfg)
}

struct Progress {
    steps: Vec<StepRecord>,
    assignments: Vec<PseudoDomainAssignment>,
    quiet: bool,
}

impl TrainObserver for Progress {
    fn on_step(&mut self, record: &StepRecord) {
        self.steps.push(record.clone());
    }

    fn on_assignment(&mut self, assignment: &PseudoDomainAssignment) {
        if !self.quiet {
            eprintln!("pseudo-domains frozen at epoch {}", assignment.epoch);
        }
        self.assignments.push(assignment.clone());
    }

    fn on_epoch(&mut self, r: &EpochRecord, _model: &PldgModel) {
        if !self.quiet {
            let val = r.val_metric.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            eprintln!("epoch {:>3} {:?} loss {:.4} val {val}", r.epoch, r.phase, r.train_loss);
        }
    }
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let mut cfg = train_config(args.preset.as_deref(), &args.cfg)?;
    if args.toggles_none {
        cfg.toggles = Toggles::NONE;
    } else if let Some(t) = &args.toggles {
        cfg.toggles = Toggles::parse(t)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;

    let train = load(&args.data, "train", &cfg)?;
    let val = load(&args.data, "val", &cfg)?;
    let val_ood = match cfg.selection {
        Selection::OodVal => Some(load(&args.data, &args.ood_val_split, &cfg)?),
        Selection::TrainDomainVal => None,
    };

    let dir = RunDir::open(&out_path(args.out, "train"), args.force)?;
    fs::write(dir.file("config.toml"), to_toml(&cfg)?).map_err(|e| runtime(e.to_string()))?;

    let mut progress = Progress {
        steps: Vec::new(),
        assignments: Vec::new(),
        quiet: args.quiet,
    };
    let (ck, history) = fit(
        &cfg,
        TrainData {
            train: &train,
            val: &val,
            val_ood: val_ood.as_ref(),
        },
        &mut progress,
    )?;

    ck.save(&dir.file("checkpoint.json"))?;
    history.write_csv(create(&dir.file("history.csv"))?)?;
    write_training_log_csv(&progress.steps, create(&dir.file("training_log.csv"))?)?;
    if let Some(a) = &ck.assignment {
        a.write_csv(create(&dir.file("assignment.csv"))?)?;
    }
    if !history.diagnostics.is_empty() {
        write_diagnostics_csv(&history.diagnostics, create(&dir.file("diagnostics.csv"))?)?;
    }
    println!(
        "{} ({}): selected epoch {} with val {} {:.4}; wrote {}",
        cfg.toggles.label(),
        args.data.display(),
        ck.epoch,
        cfg.metric.name(),
        ck.val_metric.unwrap_or(f64::NAN),
        dir.path.display()
    );
    Ok(())
}

// ------------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test_ood")]
    pub split: String,
    /// roc_auc or accuracy.
    #[arg(long, default_value = "roc_auc")]
    pub metric: MetricKind,
    /// Metrics CSV (default `$PLDG_RUN_ROOT/metrics.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let data = load(&args.data, &args.split, &ck.config)?;
    let out = OutFile::open(&out_path(args.out, "metrics.csv"), args.force)?;
    let pred = ck.predict(&data.pixels())?;
    let value = args.metric.score(&pred.scores, &data.labels())?;
    let report = MetricReport::new(
        dataset_label(&args.data, &args.split),
        args.metric,
        value,
        data.len(),
        ck.config.seed,
    )?;
    write_metrics_csv(&[report], create(&out.path)?)?;
    println!("{} {} = {value:.4} (n = {})", args.split, args.metric.name(), data.len());
    Ok(())
}

// ---------------------------------------------------------------- analyze

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Split the pseudo-domains were assigned on.
    #[arg(long, default_value = "train")]
    pub source_split: String,
    #[arg(long, default_value = "test_ood")]
    pub target_split: String,
    /// Distance CSV (default `$PLDG_RUN_ROOT/distances.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

pub fn analyze(args: AnalyzeArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    if ck.model.adapter.is_none() {
        return Err(usage(format!(
            "adapter not present in {}; analyze needs a checkpoint trained with +P+A",
            args.checkpoint.display()
        )));
    }
    let assignment = ck
        .assignment
        .as_ref()
        .ok_or_else(|| usage("checkpoint carries no pseudo-domain assignment"))?;
    let source = load(&args.data, &args.source_split, &ck.config)?;
    let target = load(&args.data, &args.target_split, &ck.config)?;
    let out = OutFile::open(&out_path(args.out, "distances.csv"), args.force)?;
    let report = analyze_prompt_weights(&ck.model, &source, assignment, &target)?;
    report.write_csv(create(&out.path)?)?;
    for r in &report.rows {
        println!("domain {} frechet {:.4} mean_weight {:.4}", r.domain, r.frechet, r.mean_weight);
    }
    match report.spearman {
        Some(s) => println!("spearman {s:.4}"),
        None => println!("spearman undefined"),
    }
    Ok(())
}

// ---------------------------------------------------------------- inspect

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset whose adapter weights are summarized.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test_ood")]
    pub split: String,
    /// Output directory (default `$PLDG_RUN_ROOT/inspect`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

pub fn inspect(args: InspectArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let bank = ck
        .model
        .prompts
        .as_ref()
        .ok_or_else(|| usage("checkpoint has no domain prompts"))?;
    let dir = RunDir::open(&out_path(args.out, "inspect"), args.force)?;
    write_prompts_csv(bank, create(&dir.file("prompts.csv"))?)?;
    println!(
        "{}: {} domains, prompt {}x{}, selected epoch {}",
        ck.config.toggles.label(),
        bank.num_domains(),
        bank.prompt_len(),
        bank.dim(),
        ck.epoch
    );
    if let Some(data_dir) = &args.data {
        let data = load(data_dir, &args.split, &ck.config)?;
        let stats = weight_stats(&predict(&ck.model, &data.pixels())?.weights);
        write_weight_stats_csv(&stats, create(&dir.file("weight_stats.csv"))?)?;
        for s in &stats {
            println!("domain {} weight {:.4} ± {:.4}", s.domain, s.weight_mean, s.weight_std);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- cluster

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Block whose class token is clustered (default: the checkpoint's clustering layer).
    #[arg(long)]
    pub layer: Option<usize>,
    /// Number of clusters (default: the checkpoint's domain count).
    #[arg(long)]
    pub domains: Option<usize>,
    /// Output directory (default `$PLDG_RUN_ROOT/cluster`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

pub fn cluster(args: ClusterArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let cfg = &ck.config;
    let data = load(&args.data, &args.split, cfg)?;
    let layer = args.layer.unwrap_or(cfg.cluster_layer);
    let clustering = ClusteringConfig {
        layer,
        num_domains: args.domains.unwrap_or(cfg.num_domains),
        ..cfg.clustering_config()
    };
    let dir = RunDir::open(&out_path(args.out, "cluster"), args.force)?;
    let style = collect_style_features(&ck.model.encoder, &data, layer, 64, ck.epoch)?;
    let classes = data.labels();
    let result = cluster_features(&style, &classes, &clustering)?;
    let mut slot = AssignmentSlot::default();
    let assignment = slot.assign_pseudo_domains(&data, &style, &result)?;
    assignment.write_csv(create(&dir.file("assignment.csv"))?)?;
    export_features_csv(&style, &result.assignment, &classes, create(&dir.file("features.csv"))?)?;
    let reference = data.given_domains().or_else(|| data.artifact_labels());
    let row = DiagnosticRow {
        epoch: ck.epoch,
        layer,
        nmi_class: nmi(&result.assignment, &classes)?,
        nmi_given_domain: reference.as_ref().map(|r| nmi(&result.assignment, r)).transpose()?,
        nmi_prev: None,
    };
    write_diagnostics_csv(std::slice::from_ref(&row), create(&dir.file("diagnostics.csv"))?)?;
    println!(
        "layer {layer}: sizes {:?}, nmi(class) {:.4}, nmi(reference) {}",
        assignment.domain_sizes(),
        row.nmi_class,
        row.nmi_given_domain.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}
