//! Argument parsing and dispatch for the `pcr` binary.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use pcr_core::corpus::DEFAULT_PIVOT_YEAR;
use pcr_core::pipeline::QueryVariant;
use pcr_core::trainer::LossKind;
use pcr_core::{EncoderConfig, TrainConfig};

use crate::commands;

#[derive(Debug, Parser)]
#[command(name = "pcr", version, about = "Paragraph-level citation recommendation")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load articles and paragraphs; write the candidate pool and queries
    Ingest(IngestArgs),
    /// Split queries into train / validation / test by publication year
    Split(SplitArgs),
    /// Sample training quadruplets
    Sample(SampleArgs),
    /// Fine-tune the encoder on quadruplets
    Train(TrainArgs),
    /// Embed the candidate pool, optionally ranking queries into a run file
    Index(IndexArgs),
    /// Score a run file against gold citations
    Eval(EvalArgs),
    /// Publication-age diagnostics for a run file
    Analyze(AnalyzeArgs),
    /// Serve recommendations over HTTP
    Serve(ServeArgs),
    /// Generate a clustered toy corpus
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Article JSONL
    #[arg(long)]
    pub articles: PathBuf,
    /// Discourse-labelled paragraph JSONL
    #[arg(long)]
    pub paragraphs: PathBuf,
    /// Receives pool.jsonl and queries.jsonl
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PIVOT_YEAR)]
    pub pivot: i32,
    /// Receives train.jsonl, validation.jsonl and test.jsonl
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Article JSONL with citation lists
    #[arg(long)]
    pub articles: PathBuf,
    #[arg(long)]
    pub paragraphs: PathBuf,
    /// Restrict sampling to the paragraphs of these queries
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Negatives per pool as P1,P2,P3
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [3usize, 3, 4])]
    pub quota: Vec<usize>,
    /// Quadruplets per paragraph; must equal the quota total
    #[arg(long)]
    pub per_paragraph: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Quadruplet,
    Triplet,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Quadruplet => LossKind::Quadruplet,
            LossArg::Triplet => LossKind::Triplet,
        }
    }
}

#[derive(Debug, Args)]
pub struct EncoderArgs {
    #[arg(long, default_value_t = EncoderConfig::default().hash_buckets)]
    pub hash_buckets: usize,
    #[arg(long, default_value_t = EncoderConfig::default().embed_dim)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = EncoderConfig::default().hidden_dim)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = EncoderConfig::default().out_dim)]
    pub out_dim: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub articles: PathBuf,
    /// Training queries (supply the query text of each quadruplet)
    #[arg(long)]
    pub train_queries: PathBuf,
    #[arg(long)]
    pub validation_queries: PathBuf,
    #[arg(long)]
    pub quadruplets: PathBuf,
    /// Checkpoint path; with several seeds each gets a `.seedN` suffix
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch log (TSV); printed to stdout when absent
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialisation
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().beta1)]
    pub beta1: f64,
    #[arg(long, default_value_t = TrainConfig::default().beta2)]
    pub beta2: f64,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().warmup_fraction)]
    pub warmup: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().margin)]
    pub margin: f64,
    /// Seeds for initialisation and shuffling, one run each
    #[arg(long, alias = "seed", value_delimiter = ',', default_values_t = [0u64])]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, default_value_t = LossArg::Quadruplet)]
    pub loss: LossArg,
    /// Also update the token embedding table
    #[arg(long)]
    pub train_embeddings: bool,
    #[command(flatten)]
    pub encoder: EncoderArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    /// Title, abstract and topic sentence
    Topic,
    /// Title and abstract only
    TitleAbstract,
}

impl From<VariantArg> for QueryVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Topic => QueryVariant::WithTopic,
            VariantArg::TitleAbstract => QueryVariant::TitleAbstract,
        }
    }
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Article JSONL (or a pool written by `ingest`)
    #[arg(long)]
    pub articles: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Queries to rank against the index
    #[arg(long, requires = "run")]
    pub queries: Option<PathBuf>,
    /// Run file receiving the full ranking of each query
    #[arg(long, requires = "queries")]
    pub run: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantArg::Topic)]
    pub variant: VariantArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Queries with their gold citations
    #[arg(long)]
    pub gold: PathBuf,
    /// Print the unscaled report as JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub articles: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub articles: PathBuf,
    /// Queries addressable by id in /api/v1/explain
    #[arg(long)]
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `argv` and runs the chosen subcommand.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("PCR_LOG")
        .format_timestamp(None)
        .try_init();

    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Split(a) => commands::split(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Train(a) => commands::train(&a),
        Command::Index(a) => commands::index(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Serve(a) => commands::serve(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
