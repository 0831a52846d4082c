//! `screen`: ingestion, simulation, reporting and the review service.

mod commands;
mod config_file;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use screening_core::corpus::Format;
use screening_core::sampling::StrategyKind;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "screen", version, about = "Prioritized screening for evidence reviews")]
#[command(args_override_self = true)]
struct Cli {
    /// Read `key = value` defaults from this file; explicit flags override it.
    // consumed before parsing; declared for --help
    #[arg(long, global = true, value_name = "FILE")]
    #[allow(dead_code)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest and preprocess a corpus; writes a snapshot and a counts report.
    Ingest(IngestArgs),
    /// Run a strategy x training-size x seed experiment against oracle labels.
    Simulate(SimulateArgs),
    /// Summarize one or more experiment directories.
    Report(ReportArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct IngestArgs {
    /// CSV or JSONL file with id, title and abstract.
    pub input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<Format>,
    /// Output directory for corpus.jsonl, texts.jsonl and report.json.
    #[arg(long, default_value = "ingested")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SimulateArgs {
    /// Labeled corpus (ingest columns plus `included`). Omit for --synthetic.
    #[arg(long, conflicts_with = "synthetic")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<Format>,
    /// Generate a synthetic corpus (the default when no corpus is given).
    #[arg(long)]
    pub synthetic: bool,
    /// Synthetic corpus size.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Synthetic share of included documents.
    #[arg(long, default_value_t = 0.077)]
    pub prevalence: f64,
    /// Synthetic probability that a document carries indicative terms.
    #[arg(long, default_value_t = 0.9)]
    pub signal: f64,
    /// Seed of the synthetic corpus.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "random,lc,hp")]
    pub strategies: Vec<StrategyKind>,
    /// Training sizes (labels collected before prioritized screening).
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
    pub sizes: Vec<usize>,
    /// Run seeds; each cell runs once per seed.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 0.8)]
    pub target_ir: f64,
    #[arg(long, default_value_t = 250)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 500)]
    pub init_size: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1)]
    pub ensemble_runs: usize,
    /// Experiment id; derived from the corpus when omitted.
    #[arg(long)]
    pub id: Option<String>,
    /// Report directory.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ReportArgs {
    /// Experiment directories, or directories holding several of them.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// Where the combined CSVs go.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Project storage; omit to keep everything in memory.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Static bearer token required on every route but /v1/health.
    #[arg(long, env = "SCREEN_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

fn main() -> ExitCode {
    let argv = match config_file::expand_argv(std::env::args().collect()) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(std::io::stderr)
        .init();
    let outcome = match cli.command {
        Command::Ingest(args) => commands::ingest(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Report(args) => commands::report(args),
        Command::Serve(args) => commands::serve(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
