//! `pldg`: synthesize trap sets, train, evaluate, analyze and benchmark.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod bench;
mod config;
mod error;
mod model_cmds;
mod output;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliResult;

#[derive(Parser, Debug)]
#[command(name = "pldg", version, about = "Latent domain generalization with collaborative domain prompts")]
struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

/// Config file plus dotted-key overrides, shared by configurable commands.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML file layered over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set encoder.depth=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic trap set (or the six-level sweep) as an image folder.
    Synth(synth::SynthArgs),
    /// Train a model on a dataset directory.
    Train(model_cmds::TrainArgs),
    /// Score a checkpoint on one split.
    Eval(model_cmds::EvalArgs),
    /// Relate per-domain feature distances to the adapter's prompt weights.
    Analyze(model_cmds::AnalyzeArgs),
    /// Dump a checkpoint's domain prompts and adapter weight statistics.
    Inspect(model_cmds::InspectArgs),
    /// Cluster a checkpoint's class-token features and report NMI.
    Cluster(model_cmds::ClusterArgs),
    /// Render a sweep summary or a distance report to PNG.
    Plot(bench::PlotArgs),
    /// ERM versus the full method over bias levels and seeds.
    Bench(bench::BenchArgs),
    /// Print a fully resolved configuration.
    Config(ConfigCmd),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ConfigKind {
    Train,
    Synth,
    Bench,
}

#[derive(Args, Debug)]
struct ConfigCmd {
    kind: ConfigKind,
    /// Training preset used as the base (train and bench only).
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

fn print_config(cmd: ConfigCmd) -> CliResult<()> {
    let text = match cmd.kind {
        ConfigKind::Train => config::to_toml(&model_cmds::train_config(cmd.preset.as_deref(), &cmd.cfg)?)?,
        ConfigKind::Synth => config::to_toml(&synth::trap_spec(&cmd.cfg)?)?,
        ConfigKind::Bench => config::to_toml(&bench::bench_config(cmd.preset.as_deref(), &cmd.cfg)?)?,
    };
    print!("{text}");
    Ok(())
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => model_cmds::train(a),
        Command::Eval(a) => model_cmds::eval(a),
        Command::Analyze(a) => model_cmds::analyze(a),
        Command::Inspect(a) => model_cmds::inspect(a),
        Command::Cluster(a) => model_cmds::cluster(a),
        Command::Plot(a) => bench::plot(a),
        Command::Bench(a) => bench::run(a),
        Command::Config(a) => print_config(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
