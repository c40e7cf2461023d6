//! `gce` — generalized causal effect estimation for cluster-randomized
//! trials, from the command line.
//!
//! Three subcommands: `analyze` estimates effects from a trial CSV,
//! `simulate` runs a Monte Carlo study over a built-in scenario, and
//! `truth` computes oracle estimand values for a scenario. Exit codes
//! distinguish failure classes: 2 for configuration problems, 3 for data
//! problems, 4 for numerical failures.

mod commands;
mod config;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{GlobalOpts, OutputFormat, SimulateFlags, TruthFlags};
use config::{EstimatorName, PresetName, TargetChoice};
use gce::error::ErrorClass;

#[derive(Parser)]
#[command(
    name = "gce",
    version,
    about = "Generalized causal effect estimation for cluster-randomized trials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; fills any seed the config leaves unset. Without it,
    /// missing seeds are drawn from OS entropy and recorded in the report.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 or absent: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format. JSON is canonical; csv emits the tabular mirror.
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate effects from a trial dataset.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Target estimand(s) to report.
        #[arg(long, value_enum)]
        target: Option<TargetChoice>,
    },
    /// Run a Monte Carlo study over a simulated scenario.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Scenario preset (overrides the config).
        #[arg(long, value_enum)]
        preset: Option<PresetName>,
        /// Clusters per simulated trial.
        #[arg(long)]
        m: Option<usize>,
        /// Replicates to run.
        #[arg(long)]
        reps: Option<usize>,
        /// Estimators to run, comma-separated (np, mr, dml).
        #[arg(long, value_enum, value_delimiter = ',')]
        estimators: Option<Vec<EstimatorName>>,
        /// Also write per-replicate estimates to <out>.raw.csv.
        #[arg(long)]
        raw: bool,
    },
    /// Compute true estimand values for a scenario by Monte Carlo.
    Truth {
        #[command(flatten)]
        common: CommonArgs,
        /// Scenario preset (overrides the config).
        #[arg(long, value_enum)]
        preset: Option<PresetName>,
        /// Clusters per trial (placeholder; the oracle draws pairs).
        #[arg(long)]
        m: Option<usize>,
        /// Oracle pair draws; accepts scientific notation (e.g. 1e6).
        #[arg(long, value_parser = parse_pairs)]
        pairs: Option<usize>,
        /// Target estimand(s) to report.
        #[arg(long, value_enum)]
        target: Option<TargetChoice>,
    },
}

fn parse_pairs(s: &str) -> Result<usize, String> {
    let v: f64 = s.parse().map_err(|_| format!("invalid pair count: {s}"))?;
    if !v.is_finite() || v < 0.0 || v.fract() != 0.0 || v > 1e15 {
        return Err(format!("pair count must be a nonnegative integer, got {s}"));
    }
    Ok(v as usize)
}

fn to_opts(common: &CommonArgs) -> GlobalOpts {
    GlobalOpts {
        config: common.config.clone(),
        seed: common.seed,
        out: common.out.clone(),
        format: common.format,
    }
}

fn run(cli: Cli) -> gce::error::Result<()> {
    let common = match &cli.command {
        Command::Analyze { common, .. } => common,
        Command::Simulate { common, .. } => common,
        Command::Truth { common, .. } => common,
    };
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| gce::error::Error::Config(format!("thread pool: {e}")))?;
    }
    let opts = to_opts(common);
    match cli.command {
        Command::Analyze { target, .. } => commands::analyze(&opts, target),
        Command::Simulate { preset, m, reps, estimators, raw, .. } => commands::simulate(
            &opts,
            SimulateFlags { preset, m, reps, estimators, raw },
        ),
        Command::Truth { preset, m, pairs, target, .. } => {
            commands::truth(&opts, TruthFlags { preset, m, pairs, target })
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("gce: {e}");
        std::process::exit(match e.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        });
    }
}
