use std::path::PathBuf;
use std::process::ExitCode;

use cavsim::batch::{run_batch, run_scenario, write_batch};
use cavsim::{ScenarioConfig, SimError};
use clap::Parser;

/// Mixed CAV/HDV freeway corridor simulator.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    /// Scenario TOML file; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, value_name = "PATH")]
    out_dir: Option<PathBuf>,
    /// Base random seed (overrides the config).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Run the MPR x PER grid instead of a single scenario.
    #[arg(long)]
    batch: bool,
    /// Concurrent runs in batch mode (overrides the config).
    #[arg(long, value_name = "N")]
    parallel: Option<usize>,
    /// Write trajectories.csv (single runs only).
    #[arg(long)]
    trajectories: bool,
    /// No progress output on stderr.
    #[arg(long)]
    quiet: bool,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

fn build_config(args: &Args) -> Result<ScenarioConfig, SimError> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(dir) = &args.out_dir {
        cfg.output.out_dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.parallel {
        cfg.batch.parallelism = n;
    }
    cfg.output.trajectories |= args.trajectories;
    if args.quiet {
        cfg.output.progress = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &Args) -> Result<(), SimError> {
    let cfg = build_config(args)?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    if args.batch {
        let result = run_batch(&cfg, cfg.batch.parallelism)?;
        write_batch(&result, &cfg.output.out_dir)?;
        let failed: Vec<_> = result.failures().collect();
        for f in &failed {
            eprintln!(
                "run failed: mpr={} per={} replication={}: {}",
                f.cell.mpr,
                f.cell.per,
                f.replication,
                f.result.as_ref().err().map(String::as_str).unwrap_or_default()
            );
        }
        if !failed.is_empty() {
            return Err(SimError::BatchFailures(failed.len()));
        }
    } else {
        let out = run_scenario(&cfg)?;
        if !args.quiet {
            eprint!("{}", out.summary_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
