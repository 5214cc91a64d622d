//! `ttq`: quantize detector nets, build tensor-train classifiers, and run
//! the end-to-end detect-then-classify flow.

mod commands;
mod sidecar;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ttq", version, about, arg_required_else_help = true)]
pub struct Cli {
    /// Seed for every stochastic choice a command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (falls back to the TTQ_THREADS environment variable,
    /// then to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Training arithmetic width.
    #[arg(long, global = true, value_parser = ["f32", "f64"], default_value = "f64")]
    pub precision: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a detector from a config, load or randomize weights, quantize,
    /// and report per-layer storage.
    Quantize(commands::quantize::Args),
    /// Decompose a dense matrix (CSV) into a TT matrix with an error report.
    Decompose(commands::decompose::Args),
    /// Run clips through a quantized net and persist feature sequences.
    Extract(commands::extract::Args),
    /// Train a TT recurrent classifier on extracted features.
    Train(commands::train::Args),
    /// Accuracy of a stored classifier over a feature dataset.
    Eval(commands::eval::Args),
    /// Detect-then-classify a single clip.
    Comprehend(commands::comprehend::Args),
    /// Compression accounting for stored models and reference counts.
    Report(commands::report::Args),
    /// Wall-clock and multiply-count comparisons against dense baselines.
    Bench(commands::bench::Args),
}

fn configure_threads(requested: Option<usize>) {
    let from_env = std::env::var("TTQ_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = requested.or(from_env) {
        // ignore the error when a pool already exists (tests, repeat calls)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads(cli.threads);
    let result = match &cli.command {
        Command::Quantize(args) => commands::quantize::run(&cli, args),
        Command::Decompose(args) => commands::decompose::run(&cli, args),
        Command::Extract(args) => commands::extract::run(&cli, args),
        Command::Train(args) => commands::train::run(&cli, args),
        Command::Eval(args) => commands::eval::run(&cli, args),
        Command::Comprehend(args) => commands::comprehend::run(&cli, args),
        Command::Report(args) => commands::report::run(&cli, args),
        Command::Bench(args) => commands::bench::run(&cli, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {:#}", err.code, err.source);
            ExitCode::FAILURE
        }
    }
}

/// Errors leave through stderr with a stable code prefix.
pub struct CliError {
    pub code: &'static str,
    pub source: anyhow::Error,
}

impl CliError {
    pub fn new(code: &'static str, source: impl Into<anyhow::Error>) -> Self {
        CliError {
            code,
            source: source.into(),
        }
    }
}

impl From<ttq_core::qnet::QnetError> for CliError {
    fn from(e: ttq_core::qnet::QnetError) -> Self {
        CliError {
            code: e.code(),
            source: e.into(),
        }
    }
}

impl From<ttq_core::io::IoError> for CliError {
    fn from(e: ttq_core::io::IoError) -> Self {
        CliError {
            code: e.code(),
            source: e.into(),
        }
    }
}

impl From<ttq_core::ttrnn::TtrnnError> for CliError {
    fn from(e: ttq_core::ttrnn::TtrnnError) -> Self {
        CliError {
            code: e.code(),
            source: e.into(),
        }
    }
}

impl From<ttq_core::tt::TtError> for CliError {
    fn from(e: ttq_core::tt::TtError) -> Self {
        CliError {
            code: e.code(),
            source: e.into(),
        }
    }
}

impl From<ttq_core::quant::QuantError> for CliError {
    fn from(e: ttq_core::quant::QuantError) -> Self {
        CliError {
            code: e.code(),
            source: e.into(),
        }
    }
}

impl From<ttq_core::pipeline::PipelineError> for CliError {
    fn from(e: ttq_core::pipeline::PipelineError) -> Self {
        CliError {
            code: e.code(),
            source: e.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: "IO",
            source: e.into(),
        }
    }
}
