use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ppd_core::confidence::ConfidenceMode;
use ppd_core::optimizer::{LossKind, ScoreEstimator};
use ppd_core::pipeline::{BackendKind, ExportOptions, Pipeline, PromptChoice, RunConfig};
use ppd_core::synthetic::{self, SynthParams, SYNTH_TASK};
use ppd_core::{util, Error, GatewayError};

mod exit {
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const DATASET: u8 = 3;
    pub const EMPTY_RELIABLE: u8 = 4;
    pub const BACKEND: u8 = 5;
    pub const BUDGET: u8 = 6;
    pub const MISMATCH: u8 = 7;
    pub const INCOMPLETE: u8 = 8;
}

#[derive(Parser)]
#[command(name = "ppd", version, about = "Prompt learning with pseudo-labeled demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Zero-shot labels, confidence scores and the reliable set.
    Score(Common),
    /// Learn the prompt distribution on the reliable set.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the saved checkpoint and append to the log.
        #[arg(long)]
        resume: bool,
    },
    /// Label every example with the learned prompt.
    Predict(Common),
    /// Write the fine-tuning JSONL.
    Export {
        #[command(flatten)]
        common: Common,
        /// Destination file (default: finetune.jsonl in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Export only the reliable subset.
        #[arg(long)]
        reliable_only: bool,
        /// Fail when an example has no learned label.
        #[arg(long)]
        strict: bool,
    },
    /// Generate a synthetic task with a matching config for the simulated backend.
    Synth {
        /// Directory for data.jsonl and ppd.toml.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        examples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training iterations written into the config.
        #[arg(long, default_value_t = 150)]
        iterations: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Sim,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Ce,
    Hinge,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfidenceArg {
    Lg,
    Rd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PromptArg {
    Sampled,
    Mode,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    task: Option<String>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Entropy weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Demonstrations per query.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hard cap on backend calls for this command.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long, value_enum)]
    confidence: Option<ConfidenceArg>,
    /// Keep the unnormalized bias-reduced ratio.
    #[arg(long)]
    raw_rd: bool,
    /// Use the one-hot-over-p score function instead of the default estimator.
    #[arg(long)]
    textbook_score: bool,
    /// Prompt used by predict.
    #[arg(long, value_enum)]
    mode: Option<PromptArg>,
    /// Override the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(task) = &self.task {
            cfg.task = task.clone();
        }
        if let Some(b) = self.backend {
            cfg.backend = match b {
                BackendArg::Sim => BackendKind::Sim,
                BackendArg::Http => BackendKind::Http,
            };
        }
        if let Some(g) = self.gamma {
            cfg.confidence.gamma = g;
        }
        if let Some(a) = self.alpha {
            cfg.trainer.entropy_weight = a;
        }
        if let Some(k) = self.k {
            cfg.trainer.k = k;
        }
        if let Some(l) = self.loss {
            cfg.trainer.loss = match l {
                LossArg::Ce => LossKind::Ce,
                LossArg::Hinge => LossKind::Hinge,
            };
        }
        if let Some(s) = self.seed {
            cfg.trainer.seed = s;
        }
        if self.budget.is_some() {
            cfg.budget = self.budget;
        }
        if let Some(t) = self.iterations {
            cfg.trainer.iterations = t;
        }
        if let Some(c) = self.confidence {
            cfg.confidence.mode = match c {
                ConfidenceArg::Lg => ConfidenceMode::Lg,
                ConfidenceArg::Rd => ConfidenceMode::Rd,
            };
        }
        if self.raw_rd {
            cfg.confidence.raw_rd = true;
        }
        if self.textbook_score {
            cfg.trainer.estimator = ScoreEstimator::Textbook;
        }
        if let Some(m) = self.mode {
            cfg.predict = match m {
                PromptArg::Sampled => PromptChoice::Sampled,
                PromptArg::Mode => PromptChoice::Mode,
            };
        }
        if let Some(dir) = &self.output_dir {
            // Relative to the working directory, unlike paths in the file.
            cfg.output_dir = std::path::absolute(dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
        }
        Ok(cfg)
    }

    fn open(&self) -> Result<Pipeline, Error> {
        Pipeline::open(self.load()?)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => exit::CONFIG,
        Error::Dataset(_) => exit::DATASET,
        Error::EmptyReliableSet { .. } => exit::EMPTY_RELIABLE,
        Error::Gateway(GatewayError::BudgetExceeded { .. }) => exit::BUDGET,
        Error::Gateway(_) => exit::BACKEND,
        Error::Mismatch(_) => exit::MISMATCH,
        Error::Incomplete(_) => exit::INCOMPLETE,
        _ => exit::FAILURE,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Score(common) => {
            let p = common.open()?;
            let r = p.score()?;
            println!(
                "scored {} examples: {} reliable at gamma = {} ({:?} mode)",
                r.total, r.reliable, r.gamma, r.mode
            );
            for (word, count) in p.dataset.labels.words().iter().zip(&r.per_class) {
                println!("  {word}: {count}");
            }
            println!("backend calls: {}", r.backend_calls);
        }
        Command::Train { common, resume } => {
            let p = common.open()?;
            let r = p.train(resume)?;
            println!(
                "iterations {}..{}; mean entropy {:.4} -> {:.4}",
                r.start_iteration, r.next_iteration, r.initial_entropy, r.final_entropy
            );
            println!(
                "backend calls: {}, estimated prompt tokens: {}",
                r.backend_calls, r.estimated_tokens
            );
            if r.stopped_on_budget {
                eprintln!("call budget exhausted; checkpoint saved, rerun with --resume");
                return Ok(exit::BUDGET);
            }
        }
        Command::Predict(common) => {
            let p = common.open()?;
            let r = p.predict()?;
            println!("prompt: {:?}", r.prompt);
            for (word, count) in p.dataset.labels.words().iter().zip(&r.label_counts) {
                println!("  {word}: {count}");
            }
            println!(
                "reliable examples relabeled differently: {} of {}",
                r.disagreements, r.reliable
            );
            if let Some(eval) = &r.evaluation {
                println!(
                    "accuracy {:.4} (zero-shot {:.4}) on {} gold-labeled examples",
                    eval.accuracy, eval.zero_shot_accuracy, eval.gold_examples
                );
                println!("confusion (rows gold, columns predicted):");
                for (word, row) in p.dataset.labels.words().iter().zip(&eval.confusion) {
                    let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                    println!("  {word}: {}", cells.join(" "));
                }
            }
        }
        Command::Export {
            common,
            out,
            reliable_only,
            strict,
        } => {
            let p = common.open()?;
            let r = p.export(out.as_deref(), ExportOptions { reliable_only, strict })?;
            println!(
                "exported {} examples to {} ({} without a learned label skipped)",
                r.stats.exported,
                r.path.display(),
                r.stats.skipped_unlabeled
            );
        }
        Command::Synth {
            out,
            examples,
            seed,
            iterations,
        } => write_synthetic(&out, examples, seed, iterations)?,
    }
    Ok(0)
}

fn write_synthetic(dir: &Path, examples: usize, seed: u64, iterations: u64) -> Result<(), Error> {
    let params = SynthParams {
        examples,
        seed,
        ..SynthParams::default()
    };
    let task = synthetic::generate(&params);
    let bench = synthetic::BenchmarkConfig::new(seed);
    let labels = ppd_core::gateway::builtin_labels(SYNTH_TASK)?;
    let words: Vec<&str> = labels.words().iter().map(String::as_str).collect();
    util::write_atomic(&dir.join("data.jsonl"), task.to_jsonl(&words).as_bytes())?;

    let mut config = RunConfig {
        task: SYNTH_TASK.into(),
        data: "data.jsonl".into(),
        output_dir: "out".into(),
        sim: task.sim,
        confidence: bench.confidence,
        trainer: bench.trainer,
        vocab: bench.vocab,
        ..RunConfig::default()
    };
    config.trainer.iterations = iterations;
    util::write_atomic(&dir.join("ppd.toml"), config.to_toml()?.as_bytes())?;
    println!(
        "wrote {} examples and a config to {}",
        examples,
        dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
