//! `saca` command-line interface.

pub mod commands;
pub mod config;
pub mod repl;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

pub use repl::{format_turn, run_repl};

#[derive(Debug, Parser)]
#[command(name = "saca", version, about = "Sentiment-aware conversational agent toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON run configuration (overrides built-in defaults).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// published or toy hyperparameters.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Corpus: dailydialog, emotionpush, synthetic or normalized.
    #[arg(long, global = true, visible_alias = "dataset")]
    pub corpus: Option<String>,
    /// Remove `non_neutral` utterances from every split after loading.
    #[arg(long, global = true)]
    pub drop_non_neutral: bool,
    /// Corpus directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Config override `key.path=value` (repeatable, applied last).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a corpus and write encoded examples for both tasks.
    PrepareData,
    /// Train the sentiment classifier.
    TrainClassifier(TrainClassifierArgs),
    /// Train the reply-sentiment predictor.
    TrainRsp(TrainClassifierArgs),
    /// Build a sentiment lexicon from the training split.
    BuildLexicon(BuildLexiconArgs),
    /// Train the lexicon-conditioned generator.
    TrainGenerator(TrainGeneratorArgs),
    /// Evaluate a classifier, a predictor or the full agent.
    Evaluate(EvaluateArgs),
    /// Generate replies for a history or a whole split.
    Generate(GenerateArgs),
    /// Correlate automatic metrics with human scores.
    Correlate(CorrelateArgs),
    /// Interactive chat on stdin/stdout.
    Chat(ChatArgs),
    /// Serve the chat HTTP API.
    Serve(ServeArgs),
    /// Write a synthetic marker corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainClassifierArgs {
    /// Context size.
    #[arg(long)]
    pub x: Option<usize>,
    /// concat4 or cls.
    #[arg(long)]
    pub pooling: Option<String>,
    #[arg(long)]
    pub encoder: Option<String>,
    /// Attach nearest-neighbour sentiment embeddings.
    #[arg(long)]
    pub retrieval: bool,
    /// Let training examples retrieve themselves.
    #[arg(long)]
    pub allow_self_match: bool,
    /// Embed only the target sentence for retrieval.
    #[arg(long)]
    pub embed_target_only: bool,
    /// Decay encoder rates after each step instead of per layer.
    #[arg(long)]
    pub decay_per_step: bool,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BuildLexiconArgs {
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// TFU: take the top k first, then drop shared n-grams.
    #[arg(long)]
    pub tfu_post_filter: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainGeneratorArgs {
    #[arg(long)]
    pub lexicon_kind: Option<String>,
    /// Use this lexicon file instead of building one.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub multitask: bool,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Conditioned generator directory.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    /// Unconditioned generator directory for baseline mode.
    #[arg(long)]
    pub baseline_generator: Option<PathBuf>,
    /// Reply-sentiment predictor directory.
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    /// Sentiment classifier directory used as judge.
    #[arg(long)]
    pub judge: Option<PathBuf>,
    /// greedy, topk_sampling or nucleus.
    #[arg(long)]
    pub decode: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// classify, reply_predict or generation.
    #[arg(long)]
    pub task: String,
    /// Classifier directory (classify and reply_predict).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// baseline, oracle or saca (generation).
    #[arg(long, default_value = "oracle")]
    pub mode: String,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also report sentence embedding similarity.
    #[arg(long)]
    pub ses: bool,
    #[command(flatten)]
    pub models: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    /// Conditioning label; omit for an unconditioned reply.
    #[arg(long)]
    pub label: Option<String>,
    /// History sentence, oldest first (repeatable).
    #[arg(long)]
    pub history: Vec<String>,
    /// Dump gold-conditioned replies for a corpus split instead.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct CorrelateArgs {
    /// `name=report.json` (repeatable).
    #[arg(long = "report", required = true)]
    pub reports: Vec<String>,
    /// Human scores CSV (model, question, positive_count, total).
    #[arg(long)]
    pub human: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ChatArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, default_value = "baseline")]
    pub mode: String,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Directory for per-session JSONL logs.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Comma-separated labels.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long)]
    pub dialogues_per_label: Option<usize>,
}

/// A configuration or argument problem (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn error_line(err: &anyhow::Error) -> (i32, Value) {
    let (code, kind) = if err.downcast_ref::<UsageError>().is_some() {
        (2, "usage")
    } else if let Some(e) = err.downcast_ref::<saca_core::Error>() {
        (1, e.kind())
    } else {
        (1, "runtime")
    };
    let message = format!("{err:#}").replace('\n', " ");
    (code, serde_json::json!({"status": "error", "kind": kind, "message": message}))
}

/// Runs the CLI and returns the process exit status. Failures print one
/// JSON line `{"status":"error","kind":..,"message":..}` on stderr.
pub fn run<I, T>(args: I, stdin: impl std::io::BufRead, mut stdout: impl Write, mut stderr: impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render();
            let _ = if code == 0 {
                write!(stdout, "{rendered}")
            } else {
                write!(stderr, "{rendered}")
            };
            return code;
        }
    };
    match commands::dispatch(cli, stdin, &mut stdout) {
        Ok(code) => code,
        Err(err) => {
            let (code, line) = error_line(&err);
            let _ = writeln!(stderr, "{line}");
            code
        }
    }
}
