//! The `dgl` command line.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for usage errors and
//! missing or malformed configuration.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, LevelFilter};

use dgl_core::harness::{
    config_stages, flops_table, format_records, format_sweep, run_oracle_suite, Experiment, ExperimentConfig, ORACLE_CASES,
};
use dgl_core::probe::{run_theory, theory_records, TheoryConfig};
use dgl_core::Error;

#[derive(Debug, Parser)]
#[command(name = "dgl", version, about = "Decoupled greedy training of layered networks")]
struct Cli {
    /// Overrides the run seed of the config (or the suite seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only report errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train with the configured trainer and write the metrics CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        /// Seeded cases per layer type and composition.
        #[arg(long, default_value_t = ORACLE_CASES)]
        cases: usize,
    },
    /// Two-stage linear-softmax run checking the weighted gradient-norm
    /// bound.
    Theory {
        #[arg(long)]
        steps: Option<u64>,
        /// Replicate runs averaged into the trace.
        #[arg(long, default_value_t = 3)]
        replicates: u64,
    },
    /// Async slowdown or buffer-size sweep; one CSV row per run.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-stage multiply-accumulate counts of the configured network.
    Flops {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::from_file(path).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Run(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Run(format!("stdout: {e}"))),
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Train { config } => {
            let cfg = load_config(config, cli.seed)?;
            let out = cli.out.clone().or_else(|| cfg.out.clone());
            let exp = Experiment::new(cfg)?;
            info!("training {} stages on {} samples", exp.specs.len(), exp.data.n_train());
            let report = exp.run(exp.cfg.seed)?;
            if let Some(acc) = report.final_test_acc().last().copied().flatten() {
                info!("final test accuracy {acc:.4}");
            }
            emit(out.as_deref(), &format_records(&report.records))
        }
        Command::Gradcheck { cases } => {
            let summary = run_oracle_suite(*cases, cli.seed.unwrap_or(0))?;
            emit(cli.out.as_deref(), &format!("{summary}\n"))?;
            if summary.passed() {
                Ok(())
            } else {
                Err(Failure::Run("gradient check failed".into()))
            }
        }
        Command::Theory { steps, replicates } => {
            let base = cli.seed.unwrap_or(0);
            let mut tc = TheoryConfig {
                seeds: (base..base + replicates).collect(),
                ..TheoryConfig::default()
            };
            if let Some(s) = steps {
                tc.steps = *s;
            }
            let out = run_theory(&tc)?;
            let b = &out.bound;
            info!(
                "{} bound check: lhs {:.6} rhs {:.6} satisfied {}; best grad norm ratio {:.4}, final drift ratio {:.4}",
                b.mode,
                b.lhs,
                b.rhs,
                b.satisfied,
                out.grad_norm_ratio(),
                out.drift_ratio()
            );
            emit(cli.out.as_deref(), &format_records(&theory_records(&out)))
        }
        Command::Sweep { config } => {
            let cfg = load_config(config, cli.seed)?;
            let out = cli.out.clone().or_else(|| cfg.out.clone());
            let exp = Experiment::new(cfg)?;
            let rows = exp.sweep()?;
            emit(out.as_deref(), &format_sweep(&exp.sweep_metadata(), &rows))
        }
        Command::Flops { config } => {
            let cfg = load_config(config, cli.seed)?;
            emit(cli.out.as_deref(), &flops_table(&config_stages(&cfg)?)?)
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.quiet { LevelFilter::Error } else { LevelFilter::Info };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}
