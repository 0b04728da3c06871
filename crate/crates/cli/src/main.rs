//! `abfdr`: test treatment effects with FDR control, simulate procedures, and
//! estimate control-group covariances from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use abfdr::{Method, Sidedness};
use clap::{Args, Parser, Subcommand};

mod commands;
mod input;
mod output;

use input::InputError;

#[derive(Debug, Parser)]
#[command(
    name = "abfdr",
    version,
    about = "Treatment-effect detection with false discovery rate control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test every (treatment group, metric) pair of one experiment.
    Test(TestArgs),
    /// Estimate FDR and power of each procedure over a grid of synthetic settings.
    Simulate(SimulateArgs),
    /// Find the signal size at which a procedure reaches a target power.
    Calibrate(CalibrateArgs),
    /// Estimate the covariance of control-group metric means from unit-level data.
    Cov(CovArgs),
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Summary CSV with columns group_id, metric_id, mean, variance, n (group 0 is control).
    pub summary: PathBuf,
    /// Square CSV of the control-group covariance of metric means, header = metric names.
    #[arg(long, conflicts_with = "units")]
    pub cov: Option<PathBuf>,
    /// Control-group unit-level CSV (unit_id, then one column per metric) to estimate the covariance from.
    #[arg(long)]
    pub units: Option<PathBuf>,
    /// Estimate the covariance from this many hashed buckets of units instead of single units.
    #[arg(long, requires = "units")]
    pub buckets: Option<usize>,
    /// Seed for the unit-to-bucket hash.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// dBH tuning parameter [default: 1 for one-sided tests, 0.95 for two-sided]
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value = "two", value_parser = parse_sidedness)]
    pub sided: Sidedness,
    #[arg(long, value_delimiter = ',', default_value = "bh,by,dbh")]
    pub methods: Vec<Method>,
    /// Quadrature nodes for dBH.
    #[arg(long, default_value_t = abfdr::fdr::DEFAULT_QUADRATURE_NODES)]
    pub quadrature: usize,
    /// Report CSV; the manifest is written next to it as <name>.manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON sweep configuration; omitted fields take the defaults documented in the README.
    pub config: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Sidedness variants to run, overriding the configuration.
    #[arg(long, value_delimiter = ',', value_parser = parse_sidedness)]
    pub sided: Option<Vec<Sidedness>>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Use midpoint quadrature with this many nodes for dBH instead of exact integration.
    #[arg(long)]
    pub quadrature: Option<usize>,
    /// Long-format results CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// JSON simulation configuration (structure, sidedness, alpha, replicates, seed, ...).
    pub config: PathBuf,
    /// Power to reach.
    #[arg(long)]
    pub target: f64,
    /// Procedure whose power is calibrated.
    #[arg(long, value_delimiter = ',', default_value = "bh")]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_parser = parse_sidedness)]
    pub sided: Option<Sidedness>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quadrature: Option<usize>,
    /// Manifest JSON recording the result.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CovArgs {
    /// Unit-level CSV: unit_id, then one column per metric.
    pub units: PathBuf,
    /// Estimate from this many hashed buckets of units instead of single units.
    #[arg(long)]
    pub buckets: Option<usize>,
    /// Seed for the unit-to-bucket hash.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Covariance CSV with a header row of metric names.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_sidedness(s: &str) -> Result<Sidedness, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Test(args) => commands::test(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Calibrate(args) => commands::calibrate(&args),
        Command::Cov(args) => commands::cov(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let input = err.chain().any(|e| {
                e.downcast_ref::<InputError>().is_some()
                    || matches!(
                        e.downcast_ref::<abfdr::Error>(),
                        Some(
                            abfdr::Error::InvalidSummary(_) | abfdr::Error::InvalidParameter { .. }
                        )
                    )
            });
            ExitCode::from(if input { 2 } else { 1 })
        }
    }
}
