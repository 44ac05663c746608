use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hybridloc::config::{check_seed, parse_config, ExperimentConfig};
use hybridloc::experiment::{evaluate, replay, run_experiment, write_outputs, WriteOptions};
use hybridloc::log::parse_log;

#[derive(Parser)]
#[command(
    name = "hybridloc",
    version,
    about = "BLE/UWB hybrid indoor tracking experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate Monte Carlo runs, track them and write results.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Monte Carlo runs (overrides `runs`).
        #[arg(long)]
        runs: Option<u32>,
        /// Also write each run's measurement log.
        #[arg(long)]
        write_logs: bool,
    },
    /// Track a recorded measurement log.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Measurement-log CSV.
        #[arg(long)]
        log: PathBuf,
        /// Keep one of every D UWB epochs (overrides `schedule.decimation`).
        #[arg(long)]
        decimate: Option<u32>,
    },
    /// Rescore trajectory CSVs and rebuild ECDFs and the comparison table.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding `traj_*.csv`; defaults to the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), String> {
    let mut cfg = match &common.config {
        Some(path) => parse_config(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        check_seed(seed).map_err(|e| e.to_string())?;
        cfg.noise.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Simulate {
            common,
            jobs,
            runs,
            write_logs,
        } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(runs) = runs {
                if runs == 0 {
                    return Err("--runs must be >= 1".into());
                }
                cfg.runs = runs;
            }
            let result = run_experiment(&cfg, jobs).map_err(|e| e.to_string())?;
            let opts = WriteOptions {
                trajectories: true,
                logs: write_logs,
            };
            write_outputs(&result, &out, opts).map_err(|e| format!("{}: {e}", out.display()))?;
            print!("{}", result.table.to_csv());
        }
        Command::Replay {
            common,
            log,
            decimate,
        } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(d) = decimate {
                cfg.schedule.decimation = d;
                cfg.schedule
                    .validate()
                    .map_err(|e| format!("--decimate: {e}"))?;
            }
            let records = parse_log(&read(&log)?).map_err(|e| format!("{}: {e}", log.display()))?;
            let result = replay(&cfg, &records).map_err(|e| e.to_string())?;
            let opts = WriteOptions {
                trajectories: true,
                logs: false,
            };
            write_outputs(&result, &out, opts).map_err(|e| format!("{}: {e}", out.display()))?;
            print!("{}", result.table.to_csv());
        }
        Command::Evaluate { common, input } => {
            let (cfg, out) = load(&common)?;
            let input = input.unwrap_or_else(|| out.clone());
            let result = evaluate(&cfg, &input).map_err(|e| format!("{}: {e}", input.display()))?;
            write_outputs(&result, &out, WriteOptions::default())
                .map_err(|e| format!("{}: {e}", out.display()))?;
            print!("{}", result.table.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("hybridloc: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
