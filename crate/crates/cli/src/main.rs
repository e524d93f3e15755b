mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::commands::{FitModel, Run};

/// Rydberg-blockade gate simulator: adiabatic and transitionless (cTQD)
/// controlled-phase gates with decay and technical noise.
#[derive(Parser)]
#[command(name = "ctqd", version)]
struct Cli {
    /// Worker threads for Monte-Carlo runs, scan points and searches
    /// (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory receiving all outputs; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one gate: intrinsic fidelity, and decay-only and Monte-Carlo
    /// fidelities when enabled.
    Simulate(ConfigArgs),
    /// Run the [scan] section of the configuration. Rows are appended as
    /// points finish; rerunning resumes an interrupted scan.
    Scan {
        #[command(flatten)]
        config: ConfigArgs,
        /// Discard an existing table instead of resuming it.
        #[arg(long)]
        overwrite: bool,
    },
    /// Differential evolution over adiabatic pulse parameters, or a search
    /// of the cTQD phase pair.
    Optimize(ConfigArgs),
    /// Fit a scaling model to a scan table.
    Fit {
        /// Table written by `scan` (iso_fidelity or speedup) or an x,y table.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        model: FitModel,
    },
    /// Export the sampled pulse sequence of the configured gate.
    Waveform {
        #[command(flatten)]
        config: ConfigArgs,
        /// Samples per pulse segment.
        #[arg(long, default_value_t = 400)]
        samples: usize,
    },
}

fn with_config<T>(args: &ConfigArgs, out_dir: &std::path::Path, f: impl FnOnce(&Run) -> Result<T>) -> Result<T> {
    let loaded = config::load(&args.config)?;
    let seed = args.seed.unwrap_or(loaded.config.seed);
    f(&Run { loaded: &loaded, seed, out_dir })
}

fn execute(cli: Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Simulate(args) => {
            let r = with_config(args, out, commands::simulate)?;
            let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.5}"));
            println!(
                "T_g = {} μs  F0 = {:.5}  Fs = {}  F = {} ± {} ({} runs)  area/2π = {:.3}",
                r.gate_time_us,
                r.f0,
                fmt(r.f_s),
                fmt(r.f),
                fmt(r.sigma_f),
                r.n_runs,
                r.pulse_area.generalized
            );
        }
        Command::Scan { config, overwrite } => {
            let s = with_config(config, out, |run| commands::scan(run, *overwrite))?;
            println!(
                "{} of {} points written to {} ({} resumed, {} failed)",
                s.written,
                s.points,
                out.join(&s.table).display(),
                s.skipped,
                s.failures.len()
            );
        }
        Command::Optimize(args) => {
            let f0 = with_config(args, out, commands::optimize)?;
            println!("best F0 = {f0:.6}; details in {}", out.join("optimize.json").display());
        }
        Command::Fit { input, model } => {
            let r = commands::fit(input, *model, out)?;
            let params: Vec<String> = r
                .names
                .iter()
                .zip(r.params.iter().zip(&r.sigmas))
                .map(|(n, (v, s))| format!("{n} = {v:.4} ± {s:.4}"))
                .collect();
            println!("{}  R² = {:.4}", params.join("  "), r.r_squared);
        }
        Command::Waveform { config, samples } => {
            let n = with_config(config, out, |run| commands::waveform(run, *samples))?;
            println!("{n} samples written to {}", out.join("waveform.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| execute(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
