use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qqr_cli::commands::{cmd_bds, cmd_dfm, cmd_qqr, cmd_report, cmd_stats, load_data, Outputs};
use qqr_cli::config::{Resolved, RunConfig};
use qqr_cli::fixture::write_fixture;
use qqr_cli::CliError;

/// Quantile-on-quantile analysis of gold returns against uncertainty
/// indices.
///
/// Settings come from the JSON file given by --config; --out overrides its
/// `output_dir`.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for synthetic fixture generation.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Descriptive statistics, correlations and autocorrelations.
    Stats,
    /// BDS tests on gold returns and regression residuals.
    Bds,
    /// Quantile-on-quantile surfaces, QR comparison and role verdicts.
    Qqr,
    /// Dynamic factor model and composite uncertainty index.
    Dfm,
    /// Full pipeline with a manifest.
    Report,
    /// Write a synthetic input set and matching config.
    Fixture,
}

fn resolve(cli: &Cli) -> Result<Resolved, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut raw = RunConfig::load(path)?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    if let Some(out) = &cli.out {
        // Relative to the working directory, not the config file.
        raw.output_dir = std::env::current_dir().map(|d| d.join(out)).unwrap_or_else(|_| out.clone());
    }
    raw.resolve(&base)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::Fixture = cli.command {
        let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("fixture"));
        let files = write_fixture(cli.seed, &dir)?;
        eprintln!("wrote {} files to {}", files.len(), dir.display());
        return Ok(());
    }
    let cfg = resolve(cli)?;
    let mut out = Outputs::new(&cfg.output_dir);
    match cli.command {
        Command::Stats => cmd_stats(&load_data(&cfg)?, &mut out)?,
        Command::Bds => cmd_bds(&cfg, &load_data(&cfg)?, &mut out)?,
        Command::Qqr => cmd_qqr(&cfg, &load_data(&cfg)?, &mut out)?,
        Command::Dfm => {
            cmd_dfm(&cfg, &load_data(&cfg)?, &mut out)?;
        }
        Command::Report => cmd_report(&cfg, &mut out)?,
        Command::Fixture => unreachable!("handled above"),
    }
    eprintln!("wrote {} files to {}", out.files().len(), out.root().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
