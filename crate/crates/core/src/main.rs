//! Command-line campaign runner: loads a TOML config (or the built-in
//! defaults), applies CLI overrides, runs the Monte Carlo campaign, and
//! writes `trials.csv` and `summary.txt` into the output directory.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;

use simbeam::harness::{
    run_campaign, summary_document, write_outputs, CampaignConfig, PhaseVariant, Scheme, SweepVar,
};

#[derive(Parser, Debug)]
#[command(
    name = "simbeam",
    about = "Monte Carlo sum-rate campaigns for stacked-metasurface downlink beamforming",
    version
)]
struct Cli {
    /// TOML configuration file; omitted means built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,

    /// Trials-per-sweep-point override.
    #[arg(long)]
    trials: Option<usize>,

    /// Keep only these schemes (comma separated), e.g. `sim-opt,mmimo-zf`.
    #[arg(long, value_delimiter = ',')]
    schemes: Vec<Scheme>,

    /// Keep only these fit variants (comma separated).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<PhaseVariant>,

    /// Sweep variable override (use with --values).
    #[arg(long)]
    sweep: Option<SweepVar>,

    /// Sweep values override (comma separated), e.g. `16,36,49,64`.
    #[arg(long, value_delimiter = ',')]
    values: Vec<u64>,

    /// Iteration budget override for both optimization stages.
    #[arg(long)]
    iterations: Option<usize>,

    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Verbosity: -v info, -vv debug, -vvv trace.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut config = match &cli.config {
        Some(path) => CampaignConfig::from_path(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => CampaignConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(trials) = cli.trials {
        config.trials = trials;
    }
    if !cli.schemes.is_empty() {
        config.schemes = cli.schemes.clone();
    }
    if !cli.variants.is_empty() {
        config.variants = cli.variants.clone();
    }
    if let Some(sweep) = cli.sweep {
        config.sweep = sweep;
    }
    if !cli.values.is_empty() {
        config.sweep_values = cli.values.clone();
    }
    if let Some(iterations) = cli.iterations {
        config.max_iterations = iterations;
    }
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    config.validate().context("validating configuration")?;

    log::info!(
        "running {} sweep over {:?}: {} trials per point, {} schemes",
        config.sweep,
        config.sweep_values,
        config.trials,
        config.schemes.len()
    );
    let outcome = run_campaign(&config).context("running campaign")?;
    let (csv_path, summary_path) =
        write_outputs(&config, &outcome).context("writing output files")?;

    print!("{}", summary_document(&config, &outcome));
    eprintln!(
        "wrote {} rows to {} and the summary to {} ({} trials failed)",
        outcome.rows.len(),
        csv_path.display(),
        summary_path.display(),
        outcome.failed_trials
    );
    Ok(())
}
