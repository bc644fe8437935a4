//! Command-line front end: config-driven, seeded, reproducible runs that
//! regenerate the toolkit's data products (band structures, LDOS spectra,
//! lifetime models, synthetic experiments and their analysis).
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pcw_core::Error;

use config::{load_config, RunConfig};
use output::RunDir;

#[derive(Parser)]
#[command(name = "pcw", version, about = "Photonic-crystal-waveguide emitter toolkit")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key by dotted path, e.g. --set run.seed=7.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "pcw-out")]
    out: PathBuf,

    /// Override the RNG seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Bound the worker thread count (0 = library default).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Band structure, band gap, and guided-mode group index.
    Bands,
    /// FDTD LDOS spectra at the canonical dipole positions.
    Ldos,
    /// Closed-form modified lifetime and branching table.
    Lifetime,
    /// Monte-Carlo emitter ensemble over position and orientation.
    Ensemble,
    /// Lifetime versus Zeeman-tuned emission frequency.
    Zeeman,
    /// Synthesize a pulsed-fluorescence experiment (spectrum + time tags).
    Synth,
    /// Analyze a spectrum CSV and/or a time-tag stream.
    Analyze {
        #[arg(long)]
        spectrum: Option<PathBuf>,
        #[arg(long)]
        stream: Option<PathBuf>,
    },
    /// Group index from Fabry-Perot resonances and the reciprocal fit.
    Ng {
        /// Resonance frequency list (THz, one per line); synthetic comb
        /// when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Detection-efficiency budget and the filtering-only hypothesis test.
    Budget,
}

fn run(cli: &Cli) -> pcw_core::Result<()> {
    let mut cfg: RunConfig = load_config(cli.config.as_deref(), &cli.sets)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.run.jobs = jobs;
    }
    if cfg.run.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.jobs)
            .build_global()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    }
    let out = RunDir::create(&cli.out)?;
    let name = match &cli.command {
        Command::Bands => "bands",
        Command::Ldos => "ldos",
        Command::Lifetime => "lifetime",
        Command::Ensemble => "ensemble",
        Command::Zeeman => "zeeman",
        Command::Synth => "synth",
        Command::Analyze { .. } => "analyze",
        Command::Ng { .. } => "ng",
        Command::Budget => "budget",
    };
    out.write_provenance(name, &cfg)?;
    match &cli.command {
        Command::Bands => commands::photonics::cmd_bands(&cfg, &out),
        Command::Ldos => commands::photonics::cmd_ldos(&cfg, &out),
        Command::Lifetime => commands::emitters::cmd_lifetime(&cfg, &out),
        Command::Ensemble => commands::emitters::cmd_ensemble(&cfg, &out),
        Command::Zeeman => commands::emitters::cmd_zeeman(&cfg, &out),
        Command::Synth => commands::experiment::cmd_synth(&cfg, &out),
        Command::Analyze { spectrum, stream } => {
            commands::experiment::cmd_analyze(&cfg, &out, spectrum.as_deref(), stream.as_deref())
        }
        Command::Ng { input } => commands::photonics::cmd_ng(&cfg, &out, input.as_deref()),
        Command::Budget => commands::experiment::cmd_budget(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) | Error::Parse(_) | Error::Io(_) => ExitCode::from(2),
                Error::Numerical(_) | Error::FitFailure { .. } | Error::Resource(_) => {
                    ExitCode::from(3)
                }
            }
        }
    }
}
