//! samkit command line: runs arbitrage experiments from a config file and
//! writes CSV/JSON artifacts for external plotting.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use samkit::config::ExperimentConfig;
use samkit::data::{parse_log, ParseOptions};
use samkit::experiment;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "samkit", version, about = "Statistical arbitrage mining for RTB display ads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Experiment config file (key = value with dotted sections).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Treat log prices as CPM quotes (divide by 1000).
    #[arg(long)]
    cpm: bool,
    /// Emit a per-auction trace next to the reports.
    #[arg(long)]
    trace: bool,
    /// The conversion column carries clicks standing in for conversions.
    #[arg(long)]
    clicks_as_conversions: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment end to end (sweep plus optional rounds).
    Run(CommonOpts),
    /// Run only the budget sweep stage.
    Sweep(CommonOpts),
    /// Run only the dynamic re-training rounds.
    Dynamic(CommonOpts),
    /// Emit the risk/return frontier over an alpha grid.
    Frontier {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated risk-aversion values.
        #[arg(
            long,
            value_name = "A,B,...",
            default_value = "0.001,0.003,0.01,0.03,0.1,0.3,1,3,10"
        )]
        alphas: String,
    },
    /// Generate the configured synthetic market as a bid log.
    Gen {
        #[command(flatten)]
        common: CommonOpts,
        /// Output log path (TSV).
        #[arg(long, value_name = "PATH")]
        log_out: PathBuf,
    },
    /// Lint a config file and optionally a bid log.
    Validate {
        #[command(flatten)]
        common: CommonOpts,
        /// Bid log to check against the schema.
        #[arg(long, value_name = "PATH")]
        log: Option<PathBuf>,
    },
}

fn load_config(opts: &CommonOpts) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&opts.config)
        .with_context(|| format!("loading config {}", opts.config.display()))?;
    if let Some(out) = &opts.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if opts.cpm {
        cfg.data.cpm = true;
    }
    if opts.trace {
        cfg.run.trace = true;
    }
    if opts.clicks_as_conversions {
        cfg.data.clicks_as_conversions = true;
    }
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    if let Ok(value) = std::env::var("SAMKIT_THREADS") {
        let n: usize = value
            .parse()
            .with_context(|| format!("SAMKIT_THREADS must be a thread count, got {value:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing the worker pool")?;
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    init_threads()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Run(opts) => {
            let cfg = load_config(&opts)?;
            experiment::cmd_run(&cfg)?;
            println!("wrote artifacts to {}", cfg.out_dir);
        }
        Command::Sweep(opts) => {
            let mut cfg = load_config(&opts)?;
            cfg.rounds = None;
            experiment::cmd_run(&cfg)?;
            println!("wrote sweep artifacts to {}", cfg.out_dir);
        }
        Command::Dynamic(opts) => {
            let mut cfg = load_config(&opts)?;
            let rounds = match &cfg.rounds {
                Some(r) => r.clone(),
                None => bail!("config has no [rounds] section; dynamic mode needs rounds.period_hours"),
            };
            // Keep only the dynamic stage: the sweep shrinks to the rounds
            // strategy itself.
            cfg.run.strategies = vec![rounds.strategy.clone()];
            cfg.run.selections = vec![rounds.selection.clone()];
            cfg.run.divisors = vec![rounds.divisor];
            experiment::cmd_run(&cfg)?;
            println!("wrote round artifacts to {}", cfg.out_dir);
        }
        Command::Frontier { common, alphas } => {
            let cfg = load_config(&common)?;
            let grid: Vec<f64> = alphas
                .split(',')
                .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad alpha {s:?}")))
                .collect::<Result<_>>()?;
            experiment::cmd_frontier(&cfg, &grid)?;
            println!("wrote frontier.csv to {}", cfg.out_dir);
        }
        Command::Gen { common, log_out } => {
            let cfg = load_config(&common)?;
            experiment::cmd_gen(&cfg, &log_out)?;
            println!("wrote synthetic log to {}", log_out.display());
        }
        Command::Validate { common, log } => {
            let cfg = load_config(&common)?;
            println!("config ok: seed={} out_dir={}", cfg.seed, cfg.out_dir);
            if let Some(path) = log {
                let opts = ParseOptions { cpm_prices: cfg.data.cpm, has_header: None };
                let (streams, stats) = parse_log(&path, &opts)?;
                println!(
                    "log ok: {} campaigns, {} valid records, {} rejected",
                    streams.len(),
                    stats.valid,
                    stats.rejected_total()
                );
                for (reason, count) in &stats.rejected {
                    println!("  rejected ({reason}): {count}");
                }
            }
        }
    }
    Ok(())
}
