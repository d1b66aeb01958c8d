use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use doppler_harness::analysis::{cmd_filter_design, cmd_spectrum, read_profile, DesignSource};
use doppler_harness::calibrate::cmd_calibrate;
use doppler_harness::compare::cmd_compare;
use doppler_harness::config::ExperimentConfig;
use doppler_harness::run::{cmd_run, cmd_sweep};
use doppler_harness::{HarnessError, Result};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "doppler",
    version,
    about = "Low-pass filtered DP optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (flat dotted-key JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed to run; repeatable, replaces the config's seed list.
    #[arg(long = "seed", global = true)]
    seeds: Vec<u64>,
    /// Output directory, replaces output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for runs across seeds and sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Run filters whose gain differs from one.
    #[arg(long, global = true)]
    allow_nonunit_gain: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed and write traces plus metadata.
    Run,
    /// Run the cross product of the sweep.* axes.
    Sweep,
    /// Autocorrelation and PSD of the gradient snapshots in a trace.
    Spectrum {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        max_lag: usize,
    },
    /// Optimal FIR filter for a correlation profile or a recorded trace.
    FilterDesign {
        #[arg(long, conflicts_with = "trace")]
        profile: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        max_lag: usize,
        /// Use only the last W snapshots of the trace.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Paired comparison of two filters over the configured seeds.
    Compare {
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        candidate: String,
        /// Separate config for the candidate arm.
        #[arg(long)]
        candidate_config: Option<PathBuf>,
    },
    /// Noise level for a privacy budget.
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        batch_size: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        #[arg(long, default_value_t = doppler::dp::DEFAULT_ACCOUNTANT_MULTIPLIER)]
        v: f64,
        /// Envelope constant for the validity warning.
        #[arg(long)]
        u: Option<f64>,
    },
}

fn load(cli: &Cli, path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    let path = path.ok_or_else(|| HarnessError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if !cli.seeds.is_empty() {
        cfg = cfg.with_override("seeds", json!(cli.seeds))?;
    }
    if let Some(out) = &cli.out {
        cfg = cfg.with_override("output.dir", json!(out.display().to_string()))?;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn print<T: serde::Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run => {
            let cfg = load(cli, cli.config.as_ref())?;
            if let Some(w) = &cfg.privacy.envelope_warning {
                eprintln!("warning: {w}");
            }
            let summary = cmd_run(&cfg, cli.allow_nonunit_gain, cli.workers)?;
            for path in &summary.outputs {
                println!("{}", path.display());
            }
        }
        Command::Sweep => {
            let cfg = load(cli, cli.config.as_ref())?;
            let rows = cmd_sweep(&cfg, cli.allow_nonunit_gain, cli.workers)?;
            print(&rows);
        }
        Command::Spectrum { trace, max_lag } => {
            let cfg = match &cli.config {
                Some(p) => Some(load(cli, Some(p))?),
                None => None,
            };
            let report = cmd_spectrum(trace, *max_lag, cfg.as_ref(), &out_dir(cli))?;
            for path in &report.outputs {
                println!("{}", path.display());
            }
        }
        Command::FilterDesign {
            profile,
            trace,
            max_lag,
            window,
        } => {
            let source = match (profile, trace) {
                (Some(p), _) => DesignSource::Profile(read_profile(p)?),
                (None, Some(t)) => DesignSource::Trace {
                    path: t.clone(),
                    max_lag: *max_lag,
                    window: *window,
                },
                (None, None) => {
                    return Err(HarnessError::Config("give --profile or --trace".into()))
                }
            };
            let report = cmd_filter_design(&source, &out_dir(cli))?;
            print(&report.filter);
        }
        Command::Compare {
            baseline,
            candidate,
            candidate_config,
        } => {
            let base = load(cli, cli.config.as_ref())?;
            let other = match candidate_config {
                Some(p) => Some(load(cli, Some(p))?),
                None => None,
            };
            let report = cmd_compare(
                &base,
                other.as_ref(),
                baseline,
                candidate,
                cli.allow_nonunit_gain,
                cli.workers,
            )?;
            print(&report);
        }
        Command::Calibrate {
            epsilon,
            delta,
            n,
            batch_size,
            steps,
            threshold,
            v,
            u,
        } => {
            let report = cmd_calibrate(
                *epsilon,
                *delta,
                *n,
                *batch_size,
                *steps,
                *threshold,
                *v,
                *u,
            )?;
            if let Some(w) = &report.envelope_warning {
                eprintln!("warning: {w}");
            }
            print(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
