use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BackendKind, EmbeddingKind, PromptChoice, RunConfig};
use super::dataset::{load_dataset, DataFormat, Dataset};
use super::store::{
    align_store, export_finetune, read_store, store_hashes, write_store, ExportOptions,
    ExportStats,
};
use crate::confidence::{sample_random_contexts, score_example, select_reliable, ConfidenceMode, PseudoLabelRecord};
use crate::demos::{
    read_embedding_cache, write_embedding_cache, EmbeddingProvider, HashedTfIdf, NeighborIndex,
    RemoteEmbedding, LOCAL_EMBEDDING_DIM,
};
use crate::error::{Error, Result};
use crate::gateway::http::HttpBackend;
use crate::gateway::simulated::SimulatedBackend;
use crate::gateway::{Backend, Fields, Gateway, RateLimiter};
use crate::optimizer::{predict, train, IterationLog, TrainingTask};
use crate::policy::{PolicyCheckpoint, PromptPolicy, Vocabulary};
use crate::util;
use crate::vocab::{build_vocabulary, VocabularyFile};

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const STORE_FILE: &str = "store.jsonl";
pub const SCORE_SUMMARY_FILE: &str = "score_summary.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const COST_FILE: &str = "cost.json";
pub const PREDICT_REPORT_FILE: &str = "predict_report.json";
pub const EXPORT_FILE: &str = "finetune.jsonl";
pub const CACHE_FILE: &str = "cache.jsonl";
pub const EMBEDDING_CACHE_FILE: &str = "embeddings.jsonl";

/// Dimension assumed for remote embeddings when the config gives none.
pub const REMOTE_EMBEDDING_DIM: usize = 1536;

const CONTEXT_STREAM: u64 = 0x5eed_c0de;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    util::write_atomic(path, text.as_bytes())
}

#[derive(Debug, Serialize)]
struct RunConfigFile<'a> {
    config_hash: &'a str,
    config: &'a RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub config_hash: String,
    pub mode: ConfidenceMode,
    pub gamma: f64,
    pub total: usize,
    pub reliable: usize,
    pub per_class: Vec<usize>,
    pub backend_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub start_iteration: u64,
    pub next_iteration: u64,
    pub stopped_on_budget: bool,
    pub initial_entropy: f64,
    pub final_entropy: f64,
    pub backend_calls: u64,
    pub estimated_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub gold_examples: usize,
    pub accuracy: f64,
    pub zero_shot_accuracy: f64,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub config_hash: String,
    pub prompt: String,
    pub mode: PromptChoice,
    pub examples: usize,
    pub reliable: usize,
    /// Reliable examples whose learned label differs from the zero-shot one.
    pub disagreements: usize,
    pub label_counts: Vec<usize>,
    pub backend_calls: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportReport {
    pub config_hash: String,
    pub path: PathBuf,
    pub reliable_only: bool,
    #[serde(flatten)]
    pub stats: ExportStats,
}

#[derive(Serialize)]
struct LogLine<'a> {
    #[serde(flatten)]
    log: &'a IterationLog,
    config_hash: &'a str,
}

/// A validated config with its dataset, output directory and gateway.
pub struct Pipeline {
    pub config: RunConfig,
    pub config_hash: String,
    pub dataset: Dataset,
    pub gateway: Gateway,
    out: PathBuf,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("config_hash", &self.config_hash)
            .field("out", &self.out)
            .finish()
    }
}

pub fn make_backend(config: &RunConfig) -> Result<Arc<dyn Backend>> {
    Ok(match config.backend {
        BackendKind::Sim => Arc::new(SimulatedBackend::new(config.sim.clone())),
        BackendKind::Http => Arc::new(HttpBackend::from_env(config.http.clone())?),
    })
}

impl Pipeline {
    pub fn open(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let backend = make_backend(&config)?;
        Self::with_backend(config, backend)
    }

    /// Like [`Pipeline::open`] with an explicit backend in place of the
    /// configured one.
    pub fn with_backend(config: RunConfig, backend: Arc<dyn Backend>) -> Result<Self> {
        config.validate()?;
        let format = config
            .format
            .as_deref()
            .map(str::parse::<DataFormat>)
            .transpose()?;
        let dataset = load_dataset(
            &config.data_path(),
            format,
            config.template()?,
            config.label_space()?,
        )?;
        let out = config.output_path();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let limiter = config
            .rate_limit
            .map(|r| RateLimiter::new(r, r.max(1.0)))
            .transpose()?;
        let gateway = Gateway::new(backend, dataset.template.clone(), dataset.labels.clone())
            .with_budget(config.budget)
            .with_rate_limit(limiter)
            .with_cache_file(&out.join(CACHE_FILE))?;
        let config_hash = config.hash();
        write_json(
            &out.join(RUN_CONFIG_FILE),
            &RunConfigFile {
                config_hash: &config_hash,
                config: &config,
            },
        )?;
        Ok(Self {
            config,
            config_hash,
            dataset,
            gateway,
            out,
        })
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Zero-shot labels and confidence for every example, then the reliable
    /// set. The store is written even when the reliable set comes out empty.
    pub fn score(&self) -> Result<ScoreReport> {
        let cfg = &self.config.confidence;
        let fields = self.dataset.fields();
        let n = fields.len();
        let seed = self.config.trainer.seed;
        let mut records = self
            .dataset
            .examples
            .par_iter()
            .enumerate()
            .map(|(pos, ex)| {
                let contexts: Vec<&Fields> = match cfg.mode {
                    ConfidenceMode::Rd => sample_random_contexts(
                        n,
                        cfg.num_random_contexts,
                        Some(pos),
                        util::derive_seed(seed, &[CONTEXT_STREAM, pos as u64]),
                    )
                    .into_iter()
                    .map(|i| &fields[i])
                    .collect(),
                    ConfidenceMode::Lg => Vec::new(),
                };
                score_example(&self.gateway, ex.id, ex.text_hash(), &ex.fields, &contexts, cfg)
            })
            .collect::<Result<Vec<PseudoLabelRecord>>>()?;
        let selected = select_reliable(&mut records, cfg.gamma, cfg.mode, self.dataset.labels.len());
        write_store(&self.artifact(STORE_FILE), &records, &self.config_hash)?;
        let summary = selected?;
        let report = ScoreReport {
            config_hash: self.config_hash.clone(),
            mode: cfg.mode,
            gamma: cfg.gamma,
            total: summary.total,
            reliable: summary.count,
            per_class: summary.per_class,
            backend_calls: self.gateway.calls(),
        };
        write_json(&self.artifact(SCORE_SUMMARY_FILE), &report)?;
        Ok(report)
    }

    fn load_records(&self) -> Result<Vec<PseudoLabelRecord>> {
        let path = self.artifact(STORE_FILE);
        if !path.exists() {
            return Err(Error::Incomplete(format!(
                "{} not found; run score first",
                path.display()
            )));
        }
        let store = read_store(&path)?;
        let hashes = store_hashes(&store);
        if hashes.iter().any(|h| *h != self.config_hash) {
            log::warn!("the pseudo-label store was produced under a different config");
        }
        align_store(&self.dataset, store)
    }

    fn frozen(records: &[PseudoLabelRecord]) -> Vec<Option<usize>> {
        records
            .iter()
            .map(|r| r.reliable.then_some(r.zero_shot_label))
            .collect()
    }

    /// The vocabulary file, built and saved on first use. Refuses a saved
    /// file whose parameters differ from the config.
    pub fn vocabulary(&self) -> Result<(Vocabulary, String)> {
        let path = self.artifact(VOCAB_FILE);
        let file = if path.exists() {
            let file = VocabularyFile::from_json(&util::read_to_string(&path)?)?;
            if file.params != self.config.vocab {
                return Err(Error::Mismatch(format!(
                    "{} was built with different vocabulary parameters",
                    path.display()
                )));
            }
            file
        } else {
            let vocab = build_vocabulary(&self.dataset.texts(), &self.config.vocab)?;
            let mut file = VocabularyFile::new(&vocab, self.config.vocab);
            file.config_hash = Some(self.config_hash.clone());
            util::write_atomic(&path, file.to_json()?.as_bytes())?;
            file
        };
        let hash = file.hash()?;
        Ok((file.vocabulary()?, hash))
    }

    pub fn neighbor_index(&self) -> Result<NeighborIndex> {
        let texts = self.dataset.texts();
        let ids = self.dataset.ids();
        match self.config.embedding {
            EmbeddingKind::Local => {
                let dim = self.config.embedding_dim.unwrap_or(LOCAL_EMBEDDING_DIM);
                let provider = HashedTfIdf::fit(&texts, dim)?;
                NeighborIndex::build(ids, &texts, &provider)
            }
            EmbeddingKind::Remote => {
                let dim = self.config.embedding_dim.unwrap_or(REMOTE_EMBEDDING_DIM);
                let path = self.artifact(EMBEDDING_CACHE_FILE);
                if path.exists() {
                    let cached = read_embedding_cache(&path)?;
                    let matches = cached.len() == ids.len()
                        && cached.iter().zip(&ids).all(|(r, id)| r.example_id == *id && r.d == dim);
                    if matches {
                        return NeighborIndex::new(ids, cached.into_iter().map(|r| r.vector).collect());
                    }
                    log::warn!("embedding cache does not match the dataset; recomputing");
                }
                let provider = RemoteEmbedding::from_env(self.config.http.clone(), dim)?;
                let index = NeighborIndex::build(ids, &texts, &provider)?;
                write_embedding_cache(&path, provider.kind(), &index)?;
                Ok(index)
            }
        }
    }

    fn read_checkpoint(&self) -> Result<Option<PolicyCheckpoint>> {
        let path = self.artifact(CHECKPOINT_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(PolicyCheckpoint::from_json(&util::read_to_string(&path)?)?))
    }

    fn write_checkpoint(&self, policy: &PromptPolicy, vocab_hash: &str, iteration: u64) -> Result<()> {
        let mut ckpt = policy.to_checkpoint(vocab_hash);
        ckpt.iteration = iteration;
        ckpt.config_hash = Some(self.config_hash.clone());
        util::write_atomic(&self.artifact(CHECKPOINT_FILE), ckpt.to_json()?.as_bytes())
    }

    /// Runs the optimizer, checkpointing as configured. With `resume`, an
    /// existing checkpoint supplies the starting policy and iteration and
    /// the training log is appended to.
    pub fn train(&self, resume: bool) -> Result<TrainReport> {
        let records = self.load_records()?;
        let frozen = Self::frozen(&records);
        if frozen.iter().all(Option::is_none) {
            return Err(Error::EmptyReliableSet {
                gamma: self.config.confidence.gamma,
            });
        }
        let (vocab, vocab_hash) = self.vocabulary()?;
        let tc = &self.config.trainer;

        let existing = if resume { self.read_checkpoint()? } else { None };
        let (policy, start) = match existing {
            Some(ckpt) => {
                if ckpt.vocab_hash != vocab_hash {
                    return Err(Error::Mismatch(
                        "checkpoint was trained on a different vocabulary".into(),
                    ));
                }
                if ckpt.config_hash.as_deref() != Some(self.config_hash.as_str()) {
                    log::warn!("resuming a checkpoint produced under a different config");
                }
                let policy = ckpt.to_policy()?;
                if policy.len() != tc.prompt_length {
                    return Err(Error::Mismatch(format!(
                        "checkpoint prompt length {} differs from configured {}",
                        policy.len(),
                        tc.prompt_length
                    )));
                }
                (policy, ckpt.iteration)
            }
            None => {
                if resume {
                    log::warn!("no checkpoint to resume from; starting fresh");
                }
                (PromptPolicy::new_uniform(vocab.len(), tc.prompt_length)?, 0)
            }
        };
        let initial_entropy = policy.mean_entropy();

        let log_path = self.artifact(TRAIN_LOG_FILE);
        let mut log_file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(start > 0)
            .truncate(start == 0)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;

        let index = self.neighbor_index()?;
        let ids = self.dataset.ids();
        let fields = self.dataset.fields();
        let task = TrainingTask::new(&self.gateway, &vocab, &ids, &fields, &frozen, &index, tc.k)?;
        let outcome = train(&task, policy, tc, start, |entry, policy| {
            let line = serde_json::to_string(&LogLine {
                log: entry,
                config_hash: &self.config_hash,
            })?;
            writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
            let done = entry.iter + 1;
            if tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0 {
                self.write_checkpoint(policy, &vocab_hash, done)?;
            }
            Ok(())
        })?;
        self.write_checkpoint(&outcome.policy, &vocab_hash, outcome.next_iteration)?;

        let report = TrainReport {
            config_hash: self.config_hash.clone(),
            start_iteration: start,
            next_iteration: outcome.next_iteration,
            stopped_on_budget: outcome.stopped_on_budget,
            initial_entropy,
            final_entropy: outcome.policy.mean_entropy(),
            backend_calls: self.gateway.calls(),
            estimated_tokens: self.gateway.estimated_tokens(),
        };
        write_json(&self.artifact(COST_FILE), &report)?;
        Ok(report)
    }

    /// Labels every example with the trained policy and fills the
    /// `learned_label` column of the store.
    pub fn predict(&self) -> Result<PredictReport> {
        let mut records = self.load_records()?;
        let frozen = Self::frozen(&records);
        let (vocab, vocab_hash) = self.vocabulary()?;
        let ckpt = self.read_checkpoint()?.ok_or_else(|| {
            Error::Incomplete("no checkpoint found; run train first".into())
        })?;
        if ckpt.vocab_hash != vocab_hash {
            return Err(Error::Mismatch(
                "checkpoint was trained on a different vocabulary".into(),
            ));
        }
        let policy = ckpt.to_policy()?;
        if policy.vocab_size() != vocab.len() {
            return Err(Error::Mismatch("checkpoint and vocabulary sizes differ".into()));
        }
        let index = self.neighbor_index()?;
        let outcome = predict(
            &self.gateway,
            &vocab,
            &policy,
            &self.dataset.ids(),
            &self.dataset.fields(),
            &frozen,
            &index,
            self.config.trainer.k,
            self.config.predict_mode(),
        )?;
        for (rec, &label) in records.iter_mut().zip(&outcome.labels) {
            rec.learned_label = Some(label);
        }
        write_store(&self.artifact(STORE_FILE), &records, &self.config_hash)?;

        let classes = self.dataset.labels.len();
        let mut label_counts = vec![0; classes];
        for &l in &outcome.labels {
            label_counts[l] += 1;
        }
        let report = PredictReport {
            config_hash: self.config_hash.clone(),
            prompt: outcome.prompt_text,
            mode: self.config.predict,
            examples: records.len(),
            reliable: frozen.iter().filter(|f| f.is_some()).count(),
            disagreements: outcome.disagreements,
            label_counts,
            backend_calls: self.gateway.calls(),
            evaluation: evaluate(&self.dataset.gold, &records, classes),
        };
        write_json(&self.artifact(PREDICT_REPORT_FILE), &report)?;
        Ok(report)
    }

    /// Writes the fine-tuning JSONL (default `finetune.jsonl` in the output
    /// directory) plus a `.meta.json` sidecar carrying the config hash.
    pub fn export(&self, path: Option<&Path>, options: ExportOptions) -> Result<ExportReport> {
        let records = self.load_records()?;
        let (text, stats) = export_finetune(&self.dataset, &records, options)?;
        let path = path.map_or_else(|| self.artifact(EXPORT_FILE), Path::to_path_buf);
        util::write_atomic(&path, text.as_bytes())?;
        let report = ExportReport {
            config_hash: self.config_hash.clone(),
            path: path.clone(),
            reliable_only: options.reliable_only,
            stats,
        };
        let mut meta = path.into_os_string();
        meta.push(".meta.json");
        write_json(Path::new(&meta), &report)?;
        Ok(report)
    }
}

/// Accuracy against gold labels where present. Gold labels are read here
/// and nowhere else.
pub fn evaluate(gold: &[Option<usize>], records: &[PseudoLabelRecord], classes: usize) -> Option<Evaluation> {
    let mut confusion = vec![vec![0; classes]; classes];
    let (mut n, mut hits, mut zero_shot_hits) = (0, 0, 0);
    for (g, rec) in gold.iter().zip(records) {
        let (Some(g), Some(pred)) = (g, rec.learned_label) else {
            continue;
        };
        n += 1;
        hits += usize::from(*g == pred);
        zero_shot_hits += usize::from(*g == rec.zero_shot_label);
        confusion[*g][pred] += 1;
    }
    (n > 0).then(|| Evaluation {
        gold_examples: n,
        accuracy: hits as f64 / n as f64,
        zero_shot_accuracy: zero_shot_hits as f64 / n as f64,
        confusion,
    })
}
