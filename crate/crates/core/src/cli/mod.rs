//! Command-line entry points. Every subcommand is non-interactive, takes
//! its randomness from `--seed`, and writes a [`RunManifest`] next to its
//! artifacts.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 usage error (unknown
//! flag, bad flag value), and one code per [`Error`] category as given by
//! [`Error::exit_code`]: 3 config, 4 io, 5 format, 6 contract, 7 dimension,
//! 8 index, 9 split, 10 undefined-correlation, 11 non-finite. Failures print
//! one line to stderr: `error[<category>]: <message>`.

mod commands;
mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};

pub use commands::{
    cmd_build_vocab, cmd_evaluate, cmd_finetune, cmd_generate, cmd_metrics, cmd_pretrain,
    cmd_sweep, cmd_synth, subsample,
};
pub use manifest::{build_id, RunManifest, MANIFEST_FILE};

pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "parableu",
    version,
    about = "Paraphrase representation pretraining, learned metric and one-shot generation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Default, Args)]
pub struct GlobalArgs {
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key=value` settings file, e.g. `pretrain.steps=500`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for artifacts and the run manifest.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Sized for a CPU desk run.
    Desk,
    /// Full-scale hyperparameters.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Mixed-transform pretraining corpus (para TSV).
    Pretrain,
    /// Scored evaluation set (scored TSV).
    Scored,
    /// One transform at one severity (both TSVs).
    Transform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    #[value(name = "pretrain_steps")]
    PretrainSteps,
    #[value(name = "finetune_fraction")]
    FinetuneFraction,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary from corpus files.
    BuildVocab(BuildVocabArgs),
    /// Generate synthetic corpora.
    Synth(SynthArgs),
    /// Pretrain the edit encoder and generator.
    Pretrain(PretrainArgs),
    /// Fine-tune a pretrained checkpoint as a learned metric.
    Finetune(FinetuneArgs),
    /// Correlate metrics with scores, per group and averaged.
    Evaluate(EvaluateArgs),
    /// Score reference/candidate pairs with the classical metrics.
    Metrics(MetricsArgs),
    /// One-shot conditional paraphrasing from a demonstration pair.
    Generate(GenerateArgs),
    /// Downstream correlation as a function of pretraining steps or
    /// fine-tuning data size.
    Sweep(SweepArgs),
}

#[derive(Clone, Debug, Args)]
pub struct BuildVocabArgs {
    /// Para TSV files (ref, cand, [label], [source]).
    #[arg(long)]
    pub input: Vec<PathBuf>,
    /// Scored TSV files (group, ref, cand, score).
    #[arg(long)]
    pub scored_input: Vec<PathBuf>,
    #[arg(long, default_value_t = 4000)]
    pub max_size: usize,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Pretrain)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    /// Transform for `--kind transform`.
    #[arg(long)]
    pub transform: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub severity: u8,
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
    /// Comma-separated transforms for the pretraining mix.
    #[arg(long)]
    pub transforms: Option<String>,
    /// Directory with subjects.txt, verbs.txt, objects.txt, modifiers.txt
    /// and slang.txt; the built-in lexicon otherwise.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub modifier_prob: Option<f64>,
}

#[derive(Clone, Debug, Args)]
pub struct PretrainArgs {
    /// Para TSV corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Existing vocabulary; built from the corpus when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 4000)]
    pub max_vocab: usize,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub mask_prob: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Disable the autoregressive term.
    #[arg(long)]
    pub no_ar: bool,
    /// Disable the masked-LM term.
    #[arg(long)]
    pub no_mlm: bool,
    /// Disable the entailment term.
    #[arg(long)]
    pub no_cls: bool,
    /// Drop the edit vector from the generator's memory.
    #[arg(long)]
    pub ablate_conditioning: bool,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub bottleneck: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Clone, Debug, Args)]
pub struct FinetuneArgs {
    /// Pretrained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Scored TSV training data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub freeze_layers: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Clone, Debug, Args)]
pub struct EvaluateArgs {
    /// Scored TSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Metric names (bleu, ter, rouge_l, meteor_lite, chrf_pp, model) or
    /// `all`; repeat or comma-separate.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub metric: Vec<String>,
    /// Fine-tuned checkpoint for the `model` metric.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct MetricsArgs {
    /// TSV of `ref<TAB>cand` lines.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub demo_ref: String,
    #[arg(long)]
    pub demo_cand: String,
    /// New references; repeat for several.
    #[arg(long = "ref", required = true)]
    pub refs: Vec<String>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub length_penalty: Option<f64>,
}

#[derive(Clone, Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub kind: SweepKind,
    /// Ascending comma-separated grid: step counts or train fractions.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    /// Scored TSV for fine-tuning (split 75/25 by reference).
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out scored TSV for the reported correlations; the validation
    /// split is used when absent.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Pretrained checkpoint (finetune_fraction).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Para TSV pretraining corpus (pretrain_steps).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 4000)]
    pub max_vocab: usize,
    /// Fine-tuning steps per grid point.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Run grid points concurrently.
    #[arg(long)]
    pub parallel: bool,
}

/// Settings from a `--config` file.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    kv: BTreeMap<String, String>,
}

const SETTING_PREFIXES: [&str; 4] = ["model.", "pretrain.", "finetune.", "generate."];

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("config line {}: expected key=value", i + 1))
            })?;
            let k = k.trim();
            if k != "seed" && !SETTING_PREFIXES.iter().any(|p| k.starts_with(p)) {
                return Err(Error::Config(format!(
                    "config line {}: unknown setting {k}",
                    i + 1
                )));
            }
            kv.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { kv })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        }
    }

    /// `(key without prefix, value)` for every setting under `prefix`.
    pub fn section<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.kv
            .iter()
            .filter_map(move |(k, v)| k.strip_prefix(prefix).map(|rest| (rest, v.as_str())))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.kv.get(key).map(String::as_str)
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code; errors are printed as one line.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return EXIT_USAGE;
        }
    };
    let raw: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(&cli, &raw) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!(
                "error[{}]: {}",
                e.category(),
                e.to_string().replace('\n', " ")
            );
            e.exit_code()
        }
    }
}

/// Runs a parsed command line; `raw` is recorded in the manifest.
pub fn execute(cli: &Cli, raw: &[String]) -> Result<()> {
    let settings = Settings::load(cli.global.config.as_deref())?;
    let ctx = commands::Context {
        settings,
        global: cli.global.clone(),
        raw: raw.to_vec(),
    };
    match &cli.command {
        Command::BuildVocab(a) => cmd_build_vocab(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Pretrain(a) => cmd_pretrain(&ctx, a),
        Command::Finetune(a) => cmd_finetune(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Metrics(a) => cmd_metrics(&ctx, a),
        Command::Generate(a) => cmd_generate(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
    }
}
