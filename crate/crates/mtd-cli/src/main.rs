//! `mtd`: generate the synthetic benchmark, train and evaluate the relation
//! models, sweep hyperparameters, and self-verify the numerical core.
//!
//! Every command is a pure function of its inputs, config, and seed; exit
//! codes are 0 (success), 1 (failure, including verification), and 2
//! (usage or config errors).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mtd_gnn::error::{Error, Result};
use mtd_gnn::synth::{generate_dataset, GeneratorConfig};
use mtd_gnn::tensor::fault::{self, Fault};
use mtd_gnn::train::{
    parse_json_config, run_ablate, run_eval, run_train_logged, EvalConfig, RunConfig,
    RunConfigFile, SweepSpec,
};
use mtd_gnn::verify;

#[derive(Parser)]
#[command(
    name = "mtd",
    version,
    about = "Multi-task temporal graph relation benchmark",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset into a directory
    Generate(GenerateArgs),
    /// Train a model and write checkpoint, metrics, and resolved config
    Train(TrainArgs),
    /// Evaluate a checkpoint on one dataset split
    Eval(EvalArgs),
    /// Train and evaluate one cell per hyperparameter axis value
    Ablate(AblateArgs),
    /// Run the self-check property suite
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Dataset seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Run config (JSON); fields omitted there fall back to the profile
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hyperparameter profile: clevrer, benchmark, or ci
    #[arg(long)]
    profile: Option<String>,
    /// Overrides the config/profile seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Eval config (JSON) with checkpoint, dataset, and split
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint file (overrides the config)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory (overrides the config)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Split to evaluate: train, val, or test (overrides the config)
    #[arg(long)]
    split: Option<String>,
    /// Also write the metric CSV to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Sweep spec (JSON): base run config plus axis value lists
    #[arg(long)]
    config: PathBuf,
    /// Hyperparameter profile for fields the spec leaves unset
    #[arg(long)]
    profile: Option<String>,
    /// Overrides the spec seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the sweep output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Inject a deliberate backward-rule fault; the gradient checks must
    /// then fail (exit 1)
    #[arg(long, value_name = "FAULT")]
    mutate: Option<String>,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    init_worker_pool()?;
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

/// `MTD_NUM_WORKERS` caps the worker pool; unset means one worker per core.
fn init_worker_pool() -> Result<()> {
    let Ok(raw) = std::env::var("MTD_NUM_WORKERS") else {
        return Ok(());
    };
    let workers: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            Error::Config(format!(
                "MTD_NUM_WORKERS must be a positive integer, got `{raw}`"
            ))
        })?;
    // a later global-pool init loses the race only if one already exists,
    // which keeps the first configuration — fine for a CLI entry point
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .ok();
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode> {
    let config: GeneratorConfig = parse_json_config(&args.config)?;
    let manifest = generate_dataset(&config, args.seed, &args.out)?;
    let names: Vec<&str> = manifest.relations.iter().map(|r| r.name.as_str()).collect();
    println!("dataset written to {}", args.out.display());
    println!(
        "  sequences {} (train {} / val {} / test {}), feature dim {}",
        manifest.stats.n_sequences,
        manifest.splits.train.len(),
        manifest.splits.val.len(),
        manifest.splits.test.len(),
        manifest.config.feature_dim,
    );
    println!(
        "  relations {} with positive rates {:.3} / {:.3}, mean {:.2} nodes per frame",
        names.join(", "),
        manifest.stats.collision_positive_rate,
        manifest.stats.rel_motion_positive_rate,
        manifest.stats.mean_nodes_per_frame,
    );
    println!("  config sha256 {}", manifest.config_sha256);
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let file: Option<RunConfigFile> = args
        .config
        .as_ref()
        .map(parse_json_config)
        .transpose()?;
    let cfg = RunConfig::resolve(file, args.profile.as_deref(), args.seed, args.out)?;
    let summary = run_train_logged(&cfg, &mut |line| println!("{line}"))?;
    println!(
        "kept epoch {} of {} (selection loss {:.6})",
        summary.best_epoch, summary.epochs_run, summary.best_loss
    );
    println!("checkpoint       {}", summary.checkpoint.display());
    println!("metrics          {}", summary.metrics_csv.display());
    println!("resolved config  {}", summary.resolved_config.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let base: Option<EvalConfig> = args
        .config
        .as_ref()
        .map(parse_json_config)
        .transpose()?;
    let (cfg_checkpoint, cfg_dataset, cfg_split) = match base {
        Some(c) => (Some(c.checkpoint), Some(c.dataset), Some(c.split)),
        None => (None, None, None),
    };
    let checkpoint = args.checkpoint.or(cfg_checkpoint).ok_or_else(|| {
        Error::Config("set `checkpoint` in the eval config or pass --checkpoint".into())
    })?;
    let dataset = args.dataset.or(cfg_dataset).ok_or_else(|| {
        Error::Config("set `dataset` in the eval config or pass --dataset".into())
    })?;
    let split = args.split.or(cfg_split).unwrap_or_else(|| "test".into());
    let report = run_eval(&checkpoint, &dataset, &split)?;
    let csv = report.to_csv();
    if let Some(out) = &args.out {
        fs::write(out, &csv).map_err(|e| Error::io(out, e))?;
    }
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(args: AblateArgs) -> Result<ExitCode> {
    let spec: SweepSpec = parse_json_config(&args.config)?;
    let outcome = run_ablate(
        &spec,
        args.profile.as_deref(),
        args.seed,
        args.out,
        &mut |line| println!("{line}"),
    )?;
    let failed = outcome.cells.iter().filter(|c| c.error.is_some()).count();
    println!(
        "{} cells ({} failed), table at {}",
        outcome.cells.len(),
        failed,
        outcome.csv_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    if let Some(name) = &args.mutate {
        let injected = fault::parse(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown fault `{name}` (known faults: {})",
                fault::KNOWN.join(", ")
            ))
        })?;
        fault::set(injected);
        println!("injected fault: {name}");
    }
    let outcomes = verify::run_checks(&mut |line| println!("{line}"));
    fault::set(Fault::None);
    if verify::all_passed(&outcomes) {
        println!("all {} checks passed", outcomes.len());
        return Ok(ExitCode::SUCCESS);
    }
    let first = verify::first_failure(&outcomes).expect("at least one check failed");
    Err(Error::Verification {
        check: first.name.into(),
        detail: first.detail.clone(),
    })
}
