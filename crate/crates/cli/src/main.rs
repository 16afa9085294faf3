use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spectral_panel::estimators::{DensityRule, EstimatorKind};
use spectral_panel_cli::commands::{self, ClusterArgs, EstimateArgs};
use spectral_panel_cli::CliError;

#[derive(Parser)]
#[command(
    name = "spectral-panel",
    version,
    about = "Spectral clustering of panel-data individuals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Rule {
    Floor,
    Truncate,
}

#[derive(Subcommand)]
enum Command {
    /// Fit each individual of a panel CSV and write an estimate table.
    Estimate {
        panel: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        model: EstimatorKind,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, value_enum, default_value = "truncate")]
        density_rule: Rule,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster the rows of an estimate table.
    Cluster {
        estimates: PathBuf,
        #[arg(long, conflicts_with = "select_g")]
        groups: Option<usize>,
        #[arg(long)]
        select_g: bool,
        #[arg(long)]
        t_periods: Option<f64>,
        #[arg(long, default_value_t = 10)]
        gmax: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        restarts: usize,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        spectrum_csv: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
    /// Run a Monte Carlo batch described by a TOML or JSON config.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> Result<EstimatorKind, String> {
    s.parse()
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Estimate {
            panel,
            model,
            tau,
            density_rule,
            out,
        } => {
            let args = EstimateArgs {
                panel,
                model,
                tau,
                density_rule: match density_rule {
                    Rule::Floor => DensityRule::Floor,
                    Rule::Truncate => DensityRule::Truncate,
                },
                out,
            };
            commands::run_estimate(&args).map(|(_, s)| s)
        }
        Command::Cluster {
            estimates,
            groups,
            select_g,
            t_periods,
            gmax,
            seed,
            restarts,
            truth,
            out,
            spectrum_csv,
            timing,
        } => {
            let args = ClusterArgs {
                estimates,
                groups,
                select_g,
                t_periods,
                g_max: gmax,
                seed,
                restarts,
                truth,
                out,
                spectrum_csv,
                timing,
            };
            commands::run_cluster(&args).map(|(_, s)| s)
        }
        Command::Simulate { config, out } => {
            commands::run_simulate(&config, out.as_deref()).map(|(_, s)| s)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
