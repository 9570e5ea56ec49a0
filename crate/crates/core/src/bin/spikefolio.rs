use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spikefolio::harness::pipeline::synthetic_spec;
use spikefolio::harness::synth::{generate, write_prices_csv, write_universe_csv};
use spikefolio::harness::{report, run_stages, PipelineConfig, Stage};
use spikefolio::Result;

/// Largest tolerated gap between stored and recomputed report metrics.
const REPORT_TOLERANCE: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "spikefolio", version, about = "Spiking neural network portfolio optimization")]
struct Cli {
    /// Flat key = value config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean, align and impute prices; write log returns.
    Ingest,
    /// Cluster the training period and pick one asset per cluster.
    Cluster,
    /// Train the spiking network and decode its weights.
    TrainSnn,
    /// Train the feedforward baseline.
    TrainAnn,
    /// Train both models and backtest them against equal weight.
    Backtest,
    /// Recompute metrics from the exported equity curves and check them.
    Report,
    /// Full pipeline followed by the report check.
    Run,
    /// Write the configured synthetic universe as prices.csv and universe.csv.
    Synth,
    /// Print every config key with its effective value.
    Config,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    } else {
        cfg.set_seed(cfg.seed);
    }
    Ok(cfg)
}

fn check_report(out: &Path, cfg: &PipelineConfig) -> Result<bool> {
    let (metrics, worst) = report(out, cfg)?;
    for (k, v) in &metrics {
        println!("{k:<40} {v:>16.8}");
    }
    println!("max |stored - recomputed| = {worst:e}");
    Ok(worst <= REPORT_TOLERANCE)
}

fn execute(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    let stage = match cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Cluster => Stage::Cluster,
        Command::TrainSnn => Stage::TrainSnn,
        Command::TrainAnn => Stage::TrainAnn,
        Command::Backtest | Command::Run => Stage::Backtest,
        Command::Report => return check_report(&cli.out, &cfg),
        Command::Config => {
            print!("{}", cfg.to_text());
            return Ok(true);
        }
        Command::Synth => {
            std::fs::create_dir_all(&cli.out)?;
            let data = generate(&synthetic_spec(&cfg))?;
            write_prices_csv(BufWriter::new(File::create(cli.out.join("prices.csv"))?), &data.prices)?;
            write_universe_csv(BufWriter::new(File::create(cli.out.join("universe.csv"))?), &data.universe)?;
            println!("{}", cli.out.join("prices.csv").display());
            println!("{}", cli.out.join("universe.csv").display());
            return Ok(true);
        }
    };
    let output = run_stages(&cfg, &cli.out, stage)?;
    for p in &output.artifacts {
        println!("{}", p.display());
    }
    if matches!(cli.command, Command::Run) {
        return check_report(&cli.out, &cfg);
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: report metrics disagree with metrics.json beyond {REPORT_TOLERANCE:e}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
