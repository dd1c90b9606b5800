use std::fs;
use std::path::PathBuf;

use clap::Args;
use pldg::data::{generate_trap, write_dataset_dir, Artifact, TrapSpec};
use pldg::experiments::TRAP_RHOS;

use crate::config::{resolve, to_toml};
use crate::error::{runtime, CliResult};
use crate::output::{out_path, RunDir};
use crate::ConfigArgs;

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Artifact/class association strength in [0, 1].
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated artifacts: corner_patch, stripe_ruler, color_tint, curve_hair.
    #[arg(long, value_delimiter = ',')]
    pub artifacts: Vec<Artifact>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Emit one sibling directory per bias level (0, 0.3, 0.5, 0.7, 0.9, 1.0).
    #[arg(long)]
    pub sweep: bool,
    /// Output directory (default `$PLDG_RUN_ROOT/trap`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

pub fn trap_spec(cfg: &ConfigArgs) -> CliResult<TrapSpec> {
    let spec: TrapSpec = resolve(&TrapSpec::default(), cfg.config.as_deref(), &cfg.sets)?;
    spec.validate()?;
    Ok(spec)
}

pub fn run(args: SynthArgs) -> CliResult<()> {
    let mut spec = trap_spec(&args.cfg)?;
    if let Some(r) = args.rho {
        spec.rho = r;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if !args.artifacts.is_empty() {
        spec.artifacts = args.artifacts.clone();
    }
    if let Some(s) = args.image_size {
        spec.image_size = s;
    }
    spec.validate()?;

    let root = out_path(args.out, "trap");
    let dir = RunDir::open(&root, args.force)?;
    let levels: Vec<Option<f64>> = if args.sweep {
        TRAP_RHOS.iter().map(|&r| Some(r)).collect()
    } else {
        vec![None]
    };
    for level in levels {
        let (spec, target) = match level {
            Some(rho) => (TrapSpec { rho, ..spec.clone() }, dir.file(&format!("rho_{rho:.1}"))),
            None => (spec.clone(), dir.path.clone()),
        };
        let splits = generate_trap(&spec)?;
        fs::create_dir_all(&target).map_err(|e| runtime(format!("{}: {e}", target.display())))?;
        write_dataset_dir(&target, &splits.named())?;
        let toml = to_toml(&spec)?;
        fs::write(target.join("trap.toml"), toml).map_err(|e| runtime(format!("{}: {e}", target.display())))?;
        println!(
            "wrote {} (rho {}, {} train / {} val / {} test_id / {} test_ood)",
            target.display(),
            spec.rho,
            splits.train.len(),
            splits.val.len(),
            splits.test_id.len(),
            splits.test_ood.len()
        );
    }
    Ok(())
}
