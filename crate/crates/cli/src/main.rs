use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mvrm_core::Error;

mod caption;
mod classify;
mod report;
mod runlog;
mod synth;
mod train;

/// Multirate visual recurrent models: pretraining, event detection and
/// captioning over precomputed frame features.
#[derive(Parser, Debug)]
#[command(name = "mvrm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    Multirate,
    Events,
    Captions,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Encoding {
    Vlad,
    Pool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus of feature files and a manifest.
    SynthGen {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of videos (multirate, captions) or training videos (events).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Unsupervised past/future reconstruction training.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Supervised training of encoder and classification head.
    Finetune {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pretrained checkpoint whose encoder initializes the run.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Encode every video with per-group VLAD and average pooling.
    EncodeVlad {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// k-means centers per group; the checkpoint's config when absent.
        #[arg(long)]
        centers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train linear SVMs on the train split and score the test split.
    Classify {
        #[arg(long)]
        features: PathBuf,
        /// Manifest supplying labels and splits.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long = "C", default_value_t = 1.0)]
        c: f64,
        #[arg(long, value_enum, default_value = "vlad")]
        encoding: Encoding,
        /// Prediction CSV; `predictions.csv` next to the features when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean average precision of a prediction CSV.
    EvalMap {
        #[arg(long)]
        pred: PathBuf,
        /// Manifest with the true labels.
        #[arg(long)]
        truth: PathBuf,
        /// Also write the result as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the attention caption decoder.
    CaptionTrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pretrained checkpoint whose encoder initializes the run.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Caption JSON-lines; `captions.jsonl` next to the manifest when absent.
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode captions with beam search.
    CaptionDecode {
        #[arg(long)]
        ckpt: PathBuf,
        /// Vocabulary; `vocab.json` next to the checkpoint when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        /// Greedy decoding instead of beam search.
        #[arg(long)]
        greedy: bool,
        /// References to score the decoded captions against.
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of analytic gradients.
    Gradcheck {
        /// numeric, recurrent, seq2seq, classify, caption or all.
        #[arg(long, default_value = "all")]
        module: String,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Summarize one or more run directories.
    Report {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Output directory; the first run directory when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub const GRAD_TOL: f64 = 1e-4;

pub enum Failure {
    Core(Error),
    /// The command ran to completion but a numeric check failed.
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(Error::Data(e.to_string()))
    }
}

pub type CmdResult = Result<(), Failure>;

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Core(Error::InvalidArgument(_)) => 1,
        Failure::Core(Error::NonFinite { .. } | Error::UndefinedMetric(_)) => 3,
        Failure::Core(_) => 2,
        Failure::Numeric(_) => 3,
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::SynthGen { kind, out, seed, count } => synth::run(kind, &out, seed, count),
        Command::Pretrain { config, manifest, out, seed } => {
            train::pretrain(config.as_deref(), &manifest, &out, seed)
        }
        Command::Finetune { config, ckpt, manifest, out, seed } => {
            train::finetune(config.as_deref(), ckpt.as_deref(), &manifest, &out, seed)
        }
        Command::EncodeVlad { ckpt, manifest, centers, out } => classify::encode(&ckpt, &manifest, centers, &out),
        Command::Classify { features, labels, c, encoding, out } => {
            classify::classify(&features, &labels, c, encoding, out.as_deref())
        }
        Command::EvalMap { pred, truth, out } => classify::eval_map(&pred, &truth, out.as_deref()),
        Command::CaptionTrain { config, ckpt, manifest, captions, out, seed } => {
            caption::train(config.as_deref(), ckpt.as_deref(), &manifest, captions.as_deref(), &out, seed)
        }
        Command::CaptionDecode { ckpt, vocab, manifest, beam, greedy, captions, out } => {
            caption::decode(&ckpt, vocab.as_deref(), &manifest, beam, greedy, captions.as_deref(), &out)
        }
        Command::Gradcheck { module, seeds } => gradcheck(&module, seeds),
        Command::Report { runs, out } => report::run(&runs, out.as_deref()),
    }
}

fn gradcheck(module: &str, seeds: u64) -> CmdResult {
    let checks = mvrm_core::gradsuite::run(module, seeds)?;
    let mut failed = Vec::new();
    for c in &checks {
        println!(
            "op={}.{} max_rel_err={:.3e} checked={} {}",
            c.module,
            c.op,
            c.max_rel_error,
            c.checked,
            if c.passes(GRAD_TOL) { "ok" } else { "FAIL" }
        );
        if !c.passes(GRAD_TOL) {
            failed.push(format!("{}.{}", c.module, c.op));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "relative error at or above {GRAD_TOL:e} in {}",
            failed.join(", ")
        )))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Core(e) => eprintln!("error: {e}"),
                Failure::Numeric(msg) => eprintln!("error: {msg}"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}
