use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use langevin::harness::{
    run_experiment_with, self_check, summarize, write_csv, ExperimentConfig, MetricsRecord,
    RunStatus, CIFAR_SUBDIR, DATA_DIR_ENV, MNIST_SUBDIR,
};
use langevin::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Train networks with preconditioned Langevin optimizers and compare them
/// side by side.
#[derive(Debug, Parser)]
#[command(name = "langevin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every arm of an experiment file and write per-epoch CSVs.
    Run {
        config: PathBuf,
        /// Output directory (default: results/<experiment name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this seed only, replacing the file's seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of arm names.
        #[arg(long, value_delimiter = ',')]
        arms: Option<Vec<String>>,
    },
    /// Gradient, optimizer and noise self-tests.
    Check,
    /// Print where dataset files are expected.
    FetchInfo,
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn progress(r: &MetricsRecord) {
    match &r.status {
        RunStatus::Ok => eprintln!(
            "[seed {} {}] epoch {:>3}  train loss {:.4}  test loss {:.4}  test acc {:.4}  ({:.1}s)",
            r.seed, r.arm, r.epoch, r.train_loss, r.test_loss, r.test_accuracy, r.wall_seconds
        ),
        RunStatus::Failed(why) => eprintln!(
            "[seed {} {}] epoch {:>3}  FAILED: {why}",
            r.seed, r.arm, r.epoch
        ),
    }
}

fn run(
    config_path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    arms: Option<Vec<String>>,
) -> ExitCode {
    let mut config = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Some(seed) = seed {
        config.seeds = vec![seed];
    }
    if let Some(arms) = arms {
        let names: Vec<&str> = arms
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .collect();
        if let Err(e) = config.select_arms(&names) {
            return fail(EXIT_CONFIG, e);
        }
    }
    let out = out.unwrap_or_else(|| Path::new("results").join(&config.name));

    let records = match run_experiment_with(&config, &progress) {
        Ok(r) => r,
        Err(e @ Error::Config(_)) => return fail(EXIT_CONFIG, e),
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    let files = match write_csv(&records, &out) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };

    println!("{:<24} {:>10}  per seed", "arm", "final acc");
    for s in summarize(&records) {
        let per_seed: Vec<String> = s
            .per_seed
            .iter()
            .map(|(seed, a)| format!("{seed}:{a:.4}"))
            .collect();
        let flag = if s.failed { "  (failed)" } else { "" };
        println!(
            "{:<24} {:>10.4}  {}{flag}",
            s.arm,
            s.mean,
            per_seed.join(" ")
        );
    }
    println!("wrote {} files to {}", files.len(), out.display());
    ExitCode::SUCCESS
}

fn check() -> ExitCode {
    let outcomes = match self_check() {
        Ok(o) => o,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    let mut all = true;
    for o in &outcomes {
        println!(
            "{} {:<40} {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
        all &= o.passed;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        fail(EXIT_RUNTIME, "self-check failed")
    }
}

fn fetch_info() -> ExitCode {
    let root = std::env::var(DATA_DIR_ENV).unwrap_or_else(|_| "data".into());
    println!("Dataset root: {root} (set {DATA_DIR_ENV} to change it)");
    println!();
    println!("MNIST (IDX format, uncompressed) in {root}/{MNIST_SUBDIR}/:");
    for f in [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ] {
        println!("  {f}");
    }
    println!();
    println!("CIFAR-10 (binary version) in {root}/{CIFAR_SUBDIR}/:");
    for k in 1..=5 {
        println!("  data_batch_{k}.bin");
    }
    println!("  test_batch.bin");
    println!();
    println!("A config's [data] dir overrides these locations.");
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            arms,
        } => run(&config, out, seed, arms),
        Command::Check => check(),
        Command::FetchInfo => fetch_info(),
    }
}
