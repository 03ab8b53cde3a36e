//! `aggmg` — drive the adaptive smoothed-aggregation multigrid solver from
//! the command line: solve one configured problem, sweep a parameter grid,
//! export the assembled system, or dump the aggregate partition.
//!
//! Exit codes: 0 success (solve: converged), 2 solve did not converge,
//! 1 any error. `AGGMG_THREADS` caps the worker threads.

use std::env;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod config;
mod run;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "aggmg", version, about = "Adaptive smoothed-aggregation multigrid driver")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the configured problem and write report.json + levels.csv.
    Solve {
        /// Experiment description (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: config's `out`, else the working dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of configurations and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Sweep axis `name=v1,v2,...` over M, p, n_cut, Pe or method;
        /// repeat for a second axis (cross product).
        #[arg(long = "axis")]
        axes: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the assembled operator, right-hand side, graph and blocks.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the nested aggregate partition as JSON.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_thread_pool() -> Result<()> {
    match env::var("AGGMG_THREADS") {
        Ok(v) => {
            let n: usize = v
                .parse()
                .ok()
                .filter(|&n| n >= 1)
                .with_context(|| format!("AGGMG_THREADS must be a positive integer, got `{v}`"))?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("installing the thread pool")?;
            Ok(())
        }
        Err(env::VarError::NotPresent) => Ok(()),
        Err(e) => Err(e).context("reading AGGMG_THREADS"),
    }
}

fn load(config: &PathBuf, seed: Option<u64>, out: Option<&PathBuf>) -> Result<ExperimentConfig> {
    ExperimentConfig::load(config)?.resolve(seed, out.map(|p| p.as_path()))
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.as_deref().map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn dispatch(cli: Cli) -> Result<u8> {
    match &cli.cmd {
        Cmd::Solve { config, seed, out } => {
            let cfg = load(config, *seed, out.as_ref())?;
            run::cmd_solve(&cfg, &out_dir(&cfg))
        }
        Cmd::Sweep {
            config,
            axes,
            seed,
            out,
        } => {
            let cfg = load(config, *seed, out.as_ref())?;
            let axes = axes
                .iter()
                .map(|a| run::parse_axis(a))
                .collect::<Result<Vec<_>>>()?;
            run::cmd_sweep(&cfg, &axes, &out_dir(&cfg))
        }
        Cmd::Export { config, out } => {
            let cfg = load(config, None, out.as_ref())?;
            run::cmd_export(&cfg, &out_dir(&cfg))
        }
        Cmd::Partition { config, out } => {
            let cfg = load(config, None, out.as_ref())?;
            run::cmd_partition(&cfg, &out_dir(&cfg))
        }
    }
}

fn main() -> ExitCode {
    if let Err(e) = init_thread_pool() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
