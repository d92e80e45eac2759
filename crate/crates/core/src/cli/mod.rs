//! Command-line front end: config-driven, replayable runs with CSV outputs.
//!
//! Every command reads one TOML [`RunConfig`], writes its outputs into the
//! output directory and finishes with `manifest.json` (config echo, version,
//! seeds, SHA-256 of every input file, list of outputs). Exit codes: 0
//! success, 2 config error, 3 data error, 4 runtime error.

mod bundle;
mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use bundle::{load_ground_truth, load_tokens, LoadedBundle, ScoreFileBundle};
pub use commands::{execute, Manifest, MANIFEST_FILE};
pub use config::{
    streams, DecodeSection, DiagnoseSection, EmbeddingSection, EvalSection, InstanceConfig, ModelSection, RunConfig,
    Source, SweepSection, TrainSection,
};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "birank", version, about = "Bidirectional-likelihood reranking with candidate prior normalization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run seed (overrides `seed` in the config).
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a world and a retrieval instance.
    Synth,
    /// Train the bidirectional model on pairs sampled from the world.
    Train,
    /// First stage plus reranking; ranking, recall and timing reports.
    Rerank,
    /// Recall@1 over a grid of CPN strengths.
    SweepAlpha,
    /// Prior-bias report and score heatmaps before and after CPN.
    Diagnose,
    /// Caption the instance videos with prior-normalized decoding.
    Decode,
    /// Load and cross-check a score-file bundle.
    LoadCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Rerank => "rerank",
            Command::SweepAlpha => "sweep-alpha",
            Command::Diagnose => "diagnose",
            Command::Decode => "decode",
            Command::LoadCheck => "load-check",
        }
    }
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolve the config and run one parsed invocation.
pub fn run_cli(cli: &Cli) -> Result<()> {
    let mut config = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.common.out {
        config.out = Some(out.clone());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| execute(cli.command, &config, cli.common.config.as_deref()))
}
