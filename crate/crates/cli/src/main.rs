//! `panelvar`: simulate, fit and evaluate the panel VAR from the command line.
//!
//! Exit codes: 0 success, 2 data or usage error, 3 sampling failure,
//! 4 diagnostics failure under `--strict`.

mod commands;
mod config;
mod manifest;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "panelvar", version, about = "Bayesian panel VAR of transmission, excess deaths, GDP and mobility")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON run configuration; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Clone)]
pub struct SamplerArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ScenarioArg {
    Zero,
    Pandemic,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel as raw CSV files plus the true parameters.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        countries: Option<usize>,
        #[arg(long)]
        weeks: Option<usize>,
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
    },
    /// Sample the posterior and write draws, summaries and diagnostics.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Directory with the raw CSV files or a panel.json.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Exit with status 4 when any R-hat exceeds 1.01.
        #[arg(long)]
        strict: bool,
        #[arg(long, hide = true)]
        debug_corrupt_gradient: bool,
    },
    /// Impulse responses from the draws of a fit.
    Irf {
        #[command(flatten)]
        common: Common,
        /// Output directory of `fit`.
        #[arg(long)]
        fit: PathBuf,
        /// `oirf` or `girf`.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// PSIS-LOO comparison of the full model with predictor-exclusion models.
    Loo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Comma-separated responses to exclude; repeat for several models.
        /// Default: all four.
        #[arg(long)]
        exclude: Vec<String>,
        /// Run the full twelve-model comparison grid.
        #[arg(long, conflicts_with = "exclude")]
        table: bool,
    },
    /// One-step-ahead forecasts against the naive forecast.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fit: PathBuf,
    },
    /// Intercept correlations, PCA and k-means of country characteristics.
    Posthoc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fit: PathBuf,
        /// Long-format country characteristics (country, feature, value).
        #[arg(long)]
        characteristics: Option<PathBuf>,
        #[arg(long)]
        clusters: Option<usize>,
    },
    /// Leave-one-country-out refits.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PANELVAR_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common, seed, countries, weeks, scenario } => {
            commands::simulate(&common, seed, countries, weeks, scenario)
        }
        Command::Fit { common, data, sampler, strict, debug_corrupt_gradient } => {
            commands::fit(&common, &data, &sampler, strict, debug_corrupt_gradient)
        }
        Command::Irf { common, fit, kind, horizon } => commands::irf(&common, &fit, kind, horizon),
        Command::Loo { common, data, sampler, exclude, table } => {
            commands::loo(&common, &data, &sampler, &exclude, table)
        }
        Command::Forecast { common, fit } => commands::forecast(&common, &fit),
        Command::Posthoc { common, fit, characteristics, clusters } => {
            commands::posthoc(&common, &fit, characteristics.as_deref(), clusters)
        }
        Command::Sensitivity { common, data, sampler } => commands::sensitivity(&common, &data, &sampler),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
