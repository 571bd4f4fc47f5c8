//! `erc`: train, evaluate and analyse conversation emotion models.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use erc_core::ErcError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// A file that could not be read or parsed.
    #[error("{path}: {source}")]
    File { path: String, source: ErcError },
    #[error(transparent)]
    Core(#[from] ErcError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(ErcError::NumericalAbort { .. } | ErcError::NonFinite { .. }) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "erc", version, about = "Multimodal emotion recognition in conversation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct OutDir {
    /// Directory for every artifact this command writes.
    #[arg(long, env = "ERC_OUT_DIR", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint, history CSV and manifest.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutDir,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "utterance")]
        shift_level: String,
        #[command(flatten)]
        out: OutDir,
    },
    /// Export one dialogue's relation graph as JSON.
    Graph {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dialogue_id: String,
        /// Past window; `inf` for unbounded.
        #[arg(long, default_value = "10")]
        past: String,
        /// Future window; `inf` for unbounded.
        #[arg(long, default_value = "10")]
        future: String,
        #[arg(long, default_value = "both_directions")]
        edge_mode: String,
        #[arg(long)]
        no_self_loops: bool,
        /// Relation space size; defaults to the corpus maximum.
        #[arg(long)]
        num_speakers: Option<usize>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Per-utterance masking F1 series for one dialogue.
    Mask {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dialogue_id: String,
        #[command(flatten)]
        out: OutDir,
    },
    /// Ablation, context-truncation or window-size study.
    Study {
        #[arg(long)]
        corpus: PathBuf,
        /// ablation | context | window
        #[arg(long)]
        kind: String,
        /// Grid cells, e.g. `full,no_gnn;atv,t`, `all,10,3` or `0:0,4:4,inf:inf`.
        #[arg(long)]
        grid: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutDir,
    },
    /// Dump node features before or after the graph layers as CSV.
    Embed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// before_gnn | after_gnn
        #[arg(long, default_value = "after_gnn")]
        stage: String,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        out: OutDir,
    },
    /// Emotion transition statistics of a corpus.
    Transitions {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "utterance")]
        level: String,
        #[command(flatten)]
        out: OutDir,
    },
    /// Generate a synthetic corpus with a known label rule.
    Synth {
        /// none | neighbor
        #[arg(long, default_value = "none")]
        dependency: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        dialogues: usize,
        #[arg(long, default_value_t = 8)]
        utterances: usize,
        #[arg(long, default_value_t = 2)]
        speakers: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Modality widths as `a,t,v`.
        #[arg(long, default_value = "8,16,8")]
        dims: String,
        /// File name of the corpus inside `--out`.
        #[arg(long, default_value = "synth.jsonl")]
        name: String,
        #[command(flatten)]
        out: OutDir,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { corpus, config, out } => commands::train(&corpus, &config, &out.out),
        Command::Eval {
            corpus,
            checkpoint,
            split,
            shift_level,
            out,
        } => commands::eval(&corpus, &checkpoint, &split, &shift_level, &out.out),
        Command::Graph {
            corpus,
            dialogue_id,
            past,
            future,
            edge_mode,
            no_self_loops,
            num_speakers,
            out,
        } => commands::graph(
            &corpus,
            &dialogue_id,
            commands::GraphFlags {
                past,
                future,
                edge_mode,
                self_loops: !no_self_loops,
                num_speakers,
            },
            &out.out,
        ),
        Command::Mask {
            corpus,
            checkpoint,
            dialogue_id,
            out,
        } => commands::mask(&corpus, &checkpoint, &dialogue_id, &out.out),
        Command::Study {
            corpus,
            kind,
            grid,
            seeds,
            config,
            out,
        } => commands::study(&corpus, &kind, &grid, &seeds, &config, &out.out),
        Command::Embed {
            corpus,
            checkpoint,
            stage,
            split,
            out,
        } => commands::embed(&corpus, &checkpoint, &stage, &split, &out.out),
        Command::Transitions { corpus, level, out } => commands::transitions(&corpus, &level, &out.out),
        Command::Synth {
            dependency,
            seed,
            dialogues,
            utterances,
            speakers,
            classes,
            dims,
            name,
            out,
        } => commands::synth(
            commands::SynthFlags {
                dependency,
                seed,
                dialogues,
                utterances,
                speakers,
                classes,
                dims,
                name,
            },
            &out.out,
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}
