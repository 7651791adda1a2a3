//! A small sentiment-style task with known ground truth, paired with a
//! simulated backend configured to read it.
//!
//! Each sentence mixes filler words with words from the two class lexicons;
//! the gold class always has strictly more lexicon words. Some filler words
//! double as focus words for the simulated backend, so a prompt built from
//! them makes the backend weigh query evidence more heavily.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::{sample_random_contexts, score_example, select_reliable, ConfidenceConfig};
use crate::demos::{HashedTfIdf, NeighborIndex, LOCAL_EMBEDDING_DIM};
use crate::error::Result;
use crate::gateway::simulated::{SimConfig, SimulatedBackend};
use crate::gateway::{builtin_labels, Fields, Gateway, TaskTemplate};
use crate::optimizer::{predict, train, PredictMode, TrainerConfig, TrainingTask};
use crate::policy::PromptPolicy;
use crate::util;
use crate::vocab::{build_vocabulary, VocabParams};

pub const SYNTH_TASK: &str = "sst2";

const CONTEXT_STREAM: u64 = 0x5eed_c0de;

const POSITIVE: &[&str] = &[
    "great", "good", "brilliant", "charming", "superb", "moving", "fresh", "delightful",
];
const NEGATIVE: &[&str] = &[
    "bad", "dull", "awful", "boring", "weak", "messy", "tedious", "bland",
];
const FOCUS: &[&str] = &["plot", "acting", "story", "cast", "script", "pacing"];
const FILLER: &[&str] = &[
    "the", "movie", "was", "and", "it", "this", "with", "of", "really", "some", "film", "felt",
    "quite", "very",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub examples: usize,
    pub seed: u64,
    /// Filler words per sentence.
    pub filler_words: usize,
    /// Prior tilt of the backend toward the first label word.
    pub bias: f64,
    pub w_query: f64,
    pub noise_sd: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            examples: 200,
            seed: 0,
            filler_words: 6,
            bias: 0.6,
            w_query: 0.5,
            noise_sd: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub ids: Vec<u64>,
    pub fields: Vec<Fields>,
    /// Class index per example (0 = positive, 1 = negative).
    pub gold: Vec<usize>,
    pub sim: SimConfig,
}

impl SyntheticTask {
    /// One JSONL line per example, with the gold label word under `label`.
    pub fn to_jsonl(&self, label_words: &[&str]) -> String {
        let mut out = String::new();
        for ((id, f), &g) in self.ids.iter().zip(&self.fields).zip(&self.gold) {
            let mut row = serde_json::Map::new();
            row.insert("id".into(), (*id).into());
            for (k, v) in f {
                row.insert(k.clone(), v.clone().into());
            }
            row.insert("label".into(), label_words[g].into());
            out.push_str(&serde_json::Value::Object(row).to_string());
            out.push('\n');
        }
        out
    }
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|w| w.to_string()).collect()
}

pub fn sim_config(params: &SynthParams) -> SimConfig {
    SimConfig {
        seed: params.seed,
        bias: BTreeMap::from([("positive".to_string(), params.bias)]),
        w_query: params.w_query,
        noise_sd: params.noise_sd,
        lexicon: BTreeMap::from([
            ("positive".to_string(), words(POSITIVE)),
            ("negative".to_string(), words(NEGATIVE)),
        ]),
        focus_words: words(FOCUS),
        cue_words: BTreeMap::from([
            ("positive".to_string(), words(POSITIVE)),
            ("negative".to_string(), words(NEGATIVE)),
        ]),
        ..SimConfig::default()
    }
}

pub fn generate(params: &SynthParams) -> SyntheticTask {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut ids = Vec::with_capacity(params.examples);
    let mut fields = Vec::with_capacity(params.examples);
    let mut gold = Vec::with_capacity(params.examples);
    for i in 0..params.examples {
        let class = rng.random_range(0..2usize);
        let (own, other) = if class == 0 {
            (POSITIVE, NEGATIVE)
        } else {
            (NEGATIVE, POSITIVE)
        };
        let strong = rng.random_range(1..=3usize);
        let weak = rng.random_range(0..strong);
        let mut sentence: Vec<&str> = Vec::new();
        sentence.extend((0..strong).map(|_| *own.choose(&mut rng).expect("nonempty")));
        sentence.extend((0..weak).map(|_| *other.choose(&mut rng).expect("nonempty")));
        for _ in 0..params.filler_words {
            let pool = if rng.random_bool(0.4) { FOCUS } else { FILLER };
            sentence.push(pool.choose(&mut rng).expect("nonempty"));
        }
        sentence.shuffle(&mut rng);
        ids.push(i as u64);
        fields.push(Fields::from([("sentence".to_string(), sentence.join(" "))]));
        gold.push(class);
    }
    SyntheticTask {
        ids,
        fields,
        gold,
        sim: sim_config(params),
    }
}

/// Settings for one end-to-end run on a generated task.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub data: SynthParams,
    pub confidence: ConfidenceConfig,
    pub trainer: TrainerConfig,
    pub vocab: VocabParams,
    pub predict: PredictMode,
}

impl BenchmarkConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            data: SynthParams {
                seed,
                ..SynthParams::default()
            },
            confidence: ConfidenceConfig::default(),
            trainer: TrainerConfig {
                iterations: 150,
                k: 3,
                seed,
                ..TrainerConfig::default()
            },
            vocab: VocabParams {
                n_max: 20,
                pmi_threshold: 1.0,
                ..VocabParams::default()
            },
            predict: PredictMode::Sampled { seed },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub direct_accuracy: f64,
    pub final_accuracy: f64,
    pub reliable: usize,
    pub reliable_accuracy: f64,
    pub vocabulary: Vec<String>,
    pub entropy_start: f64,
    pub entropy_end: f64,
    pub prompt_text: String,
    pub backend_calls: u64,
}

fn accuracy(pred: impl Iterator<Item = usize>, gold: &[usize]) -> f64 {
    let hits = pred.zip(gold).filter(|(p, g)| p == *g).count();
    hits as f64 / gold.len().max(1) as f64
}

/// Score, train and predict in memory against the simulated backend.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    let task = generate(&config.data);
    let template = TaskTemplate::builtin(SYNTH_TASK)?;
    let labels = builtin_labels(SYNTH_TASK)?;
    let gateway = Gateway::new(SimulatedBackend::new(task.sim.clone()), template, labels);

    let mut records = Vec::with_capacity(task.ids.len());
    for (pos, (&id, f)) in task.ids.iter().zip(&task.fields).enumerate() {
        let contexts = sample_random_contexts(
            task.fields.len(),
            config.confidence.num_random_contexts,
            Some(pos),
            util::derive_seed(config.trainer.seed, &[CONTEXT_STREAM, pos as u64]),
        );
        let context_fields: Vec<&Fields> = contexts.iter().map(|&i| &task.fields[i]).collect();
        records.push(score_example(&gateway, id, String::new(), f, &context_fields, &config.confidence)?);
    }
    let summary = select_reliable(&mut records, config.confidence.gamma, config.confidence.mode, 2)?;
    let direct_accuracy = accuracy(records.iter().map(|r| r.zero_shot_label), &task.gold);
    let reliable_gold: Vec<usize> = summary.indices.iter().map(|&i| task.gold[i]).collect();
    let reliable_accuracy = accuracy(
        summary.indices.iter().map(|&i| records[i].zero_shot_label),
        &reliable_gold,
    );
    let frozen: Vec<Option<usize>> = records
        .iter()
        .map(|r| r.reliable.then_some(r.zero_shot_label))
        .collect();

    let texts: Vec<String> = task.fields.iter().map(|f| f["sentence"].clone()).collect();
    let vocab = build_vocabulary(&texts, &config.vocab)?;
    let provider = HashedTfIdf::fit(&texts, LOCAL_EMBEDDING_DIM)?;
    let index = NeighborIndex::build(task.ids.clone(), &texts, &provider)?;

    let initial = PromptPolicy::new_uniform(vocab.len(), config.trainer.prompt_length)?;
    let entropy_start = initial.mean_entropy();
    let training = TrainingTask::new(
        &gateway,
        &vocab,
        &task.ids,
        &task.fields,
        &frozen,
        &index,
        config.trainer.k,
    )?;
    let outcome = train(&training, initial, &config.trainer, 0, |_, _| Ok(()))?;
    let prediction = predict(
        &gateway,
        &vocab,
        &outcome.policy,
        &task.ids,
        &task.fields,
        &frozen,
        &index,
        config.trainer.k,
        config.predict,
    )?;
    Ok(BenchmarkOutcome {
        direct_accuracy,
        final_accuracy: accuracy(prediction.labels.iter().copied(), &task.gold),
        reliable: summary.count,
        reliable_accuracy,
        vocabulary: vocab.entries().to_vec(),
        entropy_start,
        entropy_end: outcome.policy.mean_entropy(),
        prompt_text: prediction.prompt_text,
        backend_calls: gateway.calls(),
    })
}
