//! Command-line front end for the `contrarank` ranking engine.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use error::{CliError, CliResult, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "contrarank", version, about = "Train and evaluate QA answer rankers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print dataset statistics.
    Stats(StatsArgs),
    /// Synthesize pseudo-positive pairs into an augmentation cache.
    Augment(AugmentArgs),
    /// Export a two-column generator fine-tuning corpus.
    Corpus(CorpusArgs),
    /// Train a scorer and write a checkpoint.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint and report ranking metrics.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write the synthetic benchmark splits.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SchemaArgs {
    /// Labels are grades 0..=4 instead of 0/1.
    #[arg(long)]
    pub graded: bool,
    /// Smallest grade that counts as relevant.
    #[arg(long, default_value_t = 3)]
    pub threshold: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatsFormat {
    Table,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    pub dataset: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[arg(long, value_enum, default_value_t = StatsFormat::Table)]
    pub format: StatsFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorKind {
    Stub,
    Oracle,
    Remote,
}

#[derive(Debug, Clone, Args)]
pub struct AugmentArgs {
    pub dataset: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[arg(long, value_enum, default_value_t = GeneratorKind::Stub)]
    pub generator: GeneratorKind,
    /// Base URL of the generation service.
    #[arg(long, env = "CONTRARANK_GENERATOR_URL")]
    pub url: Option<String>,
    #[arg(long, default_value = "qg")]
    pub qg_model: String,
    #[arg(long, default_value = "ag")]
    pub ag_model: String,
    /// Generator calls in flight.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub no_qg: bool,
    #[arg(long)]
    pub no_ag: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusKind {
    /// Answer → question pairs, for the question generator.
    Question,
    /// Question → answer pairs, for the answer generator.
    Answer,
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    pub dataset: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[arg(long, value_enum)]
    pub kind: CorpusKind,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pointwise,
    Pairwise,
    Contrastive,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Augmentation cache from `augment`.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// TOML file with training settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub no_qg: bool,
    #[arg(long)]
    pub no_ag: bool,
    #[arg(long)]
    pub synth_as_positive: bool,
    /// Held-out dataset evaluated after every epoch.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Defaults to `<out>.history.jsonl`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
    JsonLines,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    /// Cutoffs for P@k and nDCG@k.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 10])]
    pub k: Vec<usize>,
    /// Score queries with no relevant answer as 0 instead of skipping them.
    #[arg(long)]
    pub zero_unjudged: bool,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Random configurations per loss.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    /// Directory for `train.tsv` and `test.tsv`.
    #[arg(long, short)]
    pub out_dir: PathBuf,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match commands::dispatch(&cli.command, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
