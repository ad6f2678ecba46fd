mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use inkpipe::client::ClientError;
use inkpipe::codec::CodecError;
use inkpipe::ingest::IngestError;
use inkpipe::ink::InkError;
use inkpipe::mixture::MixtureError;
use inkpipe::pipeline::{EvalTask, PipelineError};
use inkpipe::raster::RasterError;

use config::Config;

/// Exit code 1: a file or endpoint could not be read or written.
/// Exit code 2: the input or flags are invalid.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Invalid(_) => 2,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { .. } | IngestError::Write(_) => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::Write { .. } => CliError::Io(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Ingest(i) => i.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Invalid(e.to_string())
            }
        })*
    };
}
invalid_from!(CodecError, InkError, MixtureError, ClientError);

#[derive(Parser)]
#[command(
    name = "inkpipe",
    version,
    about = "Ink rendering, task encoding, mixtures and evaluation"
)]
struct Cli {
    /// TOML config; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct RenderArgs {
    /// Ink file: .inkml, .ndjson, .jsonl (example or page records) or .json (ink).
    #[arg(long, short)]
    pub input: PathBuf,
    /// PNG to write.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Which ink in a multi-ink file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub canvas: Option<u32>,
    #[arg(long)]
    pub stroke_width: Option<u32>,
}

#[derive(Args)]
pub struct EncodeArgs {
    /// Page records (JSONL); `-` reads stdin.
    #[arg(long, short, default_value = "-")]
    pub input: String,
    /// Example records (JSONL); `-` writes stdout.
    #[arg(long, short, default_value = "-")]
    pub output: String,
    /// Ask for every class of this level.
    #[arg(long, conflicts_with = "class")]
    pub level: Option<u8>,
    /// Ask for these classes, in this order. One class uses the single-class prompt.
    #[arg(long, value_delimiter = ',')]
    pub class: Vec<String>,
    #[arg(long)]
    pub canvas: Option<u32>,
}

#[derive(Args)]
pub struct DecodeArgs {
    /// Text, answer or example records (JSONL); `-` reads stdin.
    #[arg(long, short, default_value = "-")]
    pub input: String,
    /// Segmentation records (JSONL); `-` writes stdout.
    #[arg(long, short, default_value = "-")]
    pub output: String,
    /// Treat each input line as a bare target string; ids are line numbers.
    #[arg(long)]
    pub raw: bool,
    /// Drop classes of other levels.
    #[arg(long)]
    pub level: Option<u8>,
}

#[derive(Args)]
pub struct MixArgs {
    /// Mixture spec (TOML). Defaults to `mixture` in the config.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Number of records to draw.
    #[arg(long)]
    pub n: u64,
    /// Index of the first draw.
    #[arg(long, default_value_t = 0)]
    pub start: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Example records to draw from; repeat for several files.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// seg, rec or cls.
    #[arg(long)]
    pub task: EvalTask,
    /// Predictions: seg, text or answer records.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth: seg, text or example records.
    #[arg(long)]
    pub gt: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct StatsArgs {
    /// Page records (JSONL).
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct InferArgs {
    /// Example records with ink (JSONL).
    #[arg(long, short)]
    pub input: PathBuf,
    /// Answer records (JSONL).
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Attempts per request, including the first.
    #[arg(long)]
    pub retries: Option<u32>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub resolution: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Render ink to a time/distance colored PNG.
    Render(RenderArgs),
    /// Build segmentation examples (prompt + target) from annotated pages.
    Encode(EncodeArgs),
    /// Parse segmentation target strings into boxes.
    Decode(DecodeArgs),
    /// Draw a balanced example stream from a mixture spec.
    Mix(MixArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Per-class page statistics of an annotated corpus.
    Stats(StatsArgs),
    /// Query an inference endpoint for every example.
    Infer(InferArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Render(a) => commands::render(&cfg, a),
        Command::Encode(a) => commands::encode(&cfg, a),
        Command::Decode(a) => commands::decode(&cfg, a),
        Command::Mix(a) => commands::mix(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::Stats(a) => commands::stats(a),
        Command::Infer(a) => commands::infer(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
