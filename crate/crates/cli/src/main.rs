//! `facerenov`: degrade face images, train and apply renovation models,
//! score results and run ablations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod failure;
mod rundir;
mod settings;

use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "facerenov", version, about = "Face renovation toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Flat TOML config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the `seed` config key.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides one config key (`key=value`, TOML value syntax); repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Compute device; only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu", env = "FACERENOV_DEVICE")]
    device: String,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N", env = "FACERENOV_WORKERS")]
    workers: Option<usize>,
    /// Parent of timestamped run directories.
    #[arg(long, global = true, default_value = "runs", env = "FACERENOV_RUN_ROOT")]
    run_root: PathBuf,
    /// Exact run directory instead of a timestamped one.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic face images (for smoke tests and demos).
    Synth(commands::SynthArgs),
    /// Build a paired dataset: crop, resize and degrade every input image.
    Degrade(commands::DegradeArgs),
    /// Train a model on a paired dataset.
    Train(commands::TrainArgs),
    /// Apply a trained model to a directory of images.
    Renovate(commands::RenovateArgs),
    /// Score model outputs on the TEST split.
    Evaluate(commands::EvaluateArgs),
    /// Render one image with subsets of guidance levels switched off.
    Ablate(commands::AblateArgs),
    /// Train and compare model variants on one dataset.
    AblationSuite(commands::SuiteArgs),
}

fn setup(g: &Global) -> Result<(), Failure> {
    if !g.device.eq_ignore_ascii_case("cpu") {
        return Err(Failure::Usage(format!("device `{}` is not available (only `cpu`)", g.device)));
    }
    if let Some(n) = g.workers {
        if n == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    setup(&cli.global)?;
    let mut sources = settings::Sources {
        file: cli.global.config.clone(),
        env: settings::env_overrides(std::env::vars()),
        seed: cli.global.seed,
        ..Default::default()
    };
    for s in &cli.global.sets {
        sources.sets.push(settings::parse_assignment(s)?);
    }
    let ctx = commands::Context {
        sources,
        run_root: cli.global.run_root,
        out: cli.global.out,
    };
    match cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Degrade(a) => commands::degrade(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Renovate(a) => commands::renovate(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Ablate(a) => commands::ablate(&ctx, a),
        Command::AblationSuite(a) => commands::ablation_suite(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("FACERENOV_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
