use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classification_loss, step, vr_pge_gradient, GradientOptions, LossKind, TrainerConfig};
use crate::confidence::normalize;
use crate::demos::{label_demonstrations, DemoPool, LabelCache, NeighborIndex};
use crate::error::{Error, Result};
use crate::gateway::{Fields, Gateway};
use crate::policy::{Prompt, PromptPolicy, Vocabulary};
use crate::util;

/// Everything one training run reads but never mutates.
pub struct TrainingTask<'a> {
    pub gateway: &'a Gateway,
    pub vocab: &'a Vocabulary,
    pub ids: &'a [u64],
    pub fields: &'a [Fields],
    /// Frozen zero-shot label for reliable examples, `None` for the rest.
    pub frozen: &'a [Option<usize>],
    reliable: Vec<usize>,
    neighbors: Vec<Vec<u64>>,
}

impl<'a> TrainingTask<'a> {
    /// Precomputes the `k` nearest neighbors (over the whole pool) of every
    /// reliable example.
    pub fn new(
        gateway: &'a Gateway,
        vocab: &'a Vocabulary,
        ids: &'a [u64],
        fields: &'a [Fields],
        frozen: &'a [Option<usize>],
        index: &NeighborIndex,
        k: usize,
    ) -> Result<Self> {
        if ids.len() != fields.len() || ids.len() != frozen.len() {
            return Err(Error::invalid("training slices differ in length"));
        }
        let reliable: Vec<usize> = (0..ids.len()).filter(|&i| frozen[i].is_some()).collect();
        if reliable.is_empty() {
            return Err(Error::invalid("training needs a nonempty reliable set"));
        }
        let mut neighbors = vec![Vec::new(); ids.len()];
        for &pos in &reliable {
            neighbors[pos] = index.knn(ids[pos], k)?;
        }
        Ok(Self {
            gateway,
            vocab,
            ids,
            fields,
            frozen,
            reliable,
            neighbors,
        })
    }

    pub fn reliable_positions(&self) -> &[usize] {
        &self.reliable
    }

    fn pool(&self) -> Result<DemoPool<'a>> {
        DemoPool::new(self.ids, self.fields, self.frozen)
    }
}

/// Summed loss of `prompt` over a batch of reliable positions.
pub struct MainLoss<'t, 'a> {
    pub task: &'t TrainingTask<'a>,
    pub batch: Vec<usize>,
    pub kind: LossKind,
    pub cache: &'t LabelCache,
}

impl MainLoss<'_, '_> {
    pub fn evaluate(&self, prompt: &Prompt) -> Result<f64> {
        main_loss(self.task, prompt, &self.batch, self.kind, self.cache)
    }
}

pub fn main_loss(
    task: &TrainingTask<'_>,
    prompt: &Prompt,
    batch: &[usize],
    kind: LossKind,
    cache: &LabelCache,
) -> Result<f64> {
    let text = prompt.render(task.vocab)?;
    let fingerprint = util::hash64(text.as_bytes());
    let pool = task.pool()?;
    let mut total = 0.0;
    for &pos in batch {
        let target = task.frozen.get(pos).copied().flatten().ok_or_else(|| {
            Error::invalid(format!("batch position {pos} is not a reliable example"))
        })?;
        let set = label_demonstrations(
            task.ids[pos],
            &task.neighbors[pos],
            &text,
            fingerprint,
            &pool,
            task.gateway,
            cache,
        )?;
        let resp = task
            .gateway
            .classify(&task.fields[pos], &text, &set.in_context_order(), 1.0)?;
        total += classification_loss(&normalize(&resp)?, target, kind)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: u64,
    pub mean_loss: f64,
    pub loss_var: f64,
    pub mean_entropy: f64,
    pub backend_calls: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: PromptPolicy,
    pub logs: Vec<IterationLog>,
    /// Index of the next iteration to run.
    pub next_iteration: u64,
    pub stopped_on_budget: bool,
}

fn sample_batch(reliable: &[usize], size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = size.min(reliable.len());
    index::sample(&mut rng, reliable.len(), take)
        .into_iter()
        .map(|i| reliable[i])
        .collect()
}

/// Runs iterations `start..config.iterations`. The hook sees every log line
/// together with the updated policy (checkpointing lives there). Running out
/// of backend budget ends training early without an error.
pub fn train(
    task: &TrainingTask<'_>,
    initial: PromptPolicy,
    config: &TrainerConfig,
    start: u64,
    mut on_iteration: impl FnMut(&IterationLog, &PromptPolicy) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let cache = LabelCache::new();
    let options = GradientOptions {
        samples: config.samples,
        entropy_weight: config.entropy_weight,
        estimator: config.estimator,
    };
    let mut policy = initial;
    let mut logs = Vec::new();
    for t in start..config.iterations {
        let began = Instant::now();
        let batch = sample_batch(
            task.reliable_positions(),
            config.batch_size,
            util::derive_seed(config.seed, &[t, 0]),
        );
        let loss = MainLoss {
            task,
            batch,
            kind: config.loss,
            cache: &cache,
        };
        let evaluate = |p: &Prompt| loss.evaluate(p);
        let grad = match vr_pge_gradient(&policy, util::derive_seed(config.seed, &[t, 1]), &evaluate, options) {
            Ok(g) => g,
            Err(e) if e.is_budget_exceeded() => {
                log::warn!("backend budget exhausted at iteration {t}; stopping");
                return Ok(TrainOutcome {
                    policy,
                    logs,
                    next_iteration: t,
                    stopped_on_budget: true,
                });
            }
            Err(e) => return Err(e),
        };
        policy = step(&policy, &grad, config.learning_rate)?;
        let entry = IterationLog {
            iter: t,
            mean_loss: grad.mean_loss,
            loss_var: grad.loss_var,
            mean_entropy: policy.mean_entropy(),
            backend_calls: task.gateway.calls(),
            wall_ms: began.elapsed().as_millis() as u64,
        };
        log::debug!(
            "iter {t}: loss {:.4} entropy {:.4}",
            entry.mean_loss,
            entry.mean_entropy
        );
        on_iteration(&entry, &policy)?;
        logs.push(entry);
    }
    Ok(TrainOutcome {
        policy,
        logs,
        next_iteration: config.iterations.max(start),
        stopped_on_budget: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PredictMode {
    Sampled { seed: u64 },
    Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutcome {
    pub prompt: Prompt,
    pub prompt_text: String,
    /// Learned label per example position.
    pub labels: Vec<usize>,
    /// Reliable examples whose learned label differs from the frozen one.
    pub disagreements: usize,
}

/// Labels every example under one prompt, with demonstrations drawn from
/// the reliable examples nearest to it.
#[allow(clippy::too_many_arguments)]
pub fn predict(
    gateway: &Gateway,
    vocab: &Vocabulary,
    policy: &PromptPolicy,
    ids: &[u64],
    fields: &[Fields],
    frozen: &[Option<usize>],
    index: &NeighborIndex,
    k: usize,
    mode: PredictMode,
) -> Result<PredictOutcome> {
    if ids.len() != fields.len() || ids.len() != frozen.len() {
        return Err(Error::invalid("prediction slices differ in length"));
    }
    let prompt = match mode {
        PredictMode::Sampled { seed } => policy.sample_prompt(seed),
        PredictMode::Mode => policy.mode_prompt(),
    };
    let text = prompt.render(vocab)?;

    let reliable: Vec<usize> = (0..ids.len()).filter(|&i| frozen[i].is_some()).collect();
    let mut reliable_vectors = Vec::with_capacity(reliable.len());
    for &pos in &reliable {
        let v = index
            .vector(ids[pos])
            .ok_or_else(|| Error::invalid(format!("no embedding for example {}", ids[pos])))?;
        reliable_vectors.push(v.to_vec());
    }
    let reliable_ids: Vec<u64> = reliable.iter().map(|&p| ids[p]).collect();
    let reliable_index = if reliable.is_empty() {
        None
    } else {
        Some(NeighborIndex::new(reliable_ids, reliable_vectors)?)
    };
    let pool = DemoPool::new(ids, fields, frozen)?;
    let fingerprint = util::hash64(text.as_bytes());
    let cache = LabelCache::new();

    let labels = (0..ids.len())
        .into_par_iter()
        .map(|pos| {
            let neighbors: Vec<u64> = match &reliable_index {
                Some(ri) => {
                    let v = index.vector(ids[pos]).ok_or_else(|| {
                        Error::invalid(format!("no embedding for example {}", ids[pos]))
                    })?;
                    ri.knn_vector(v, Some(ids[pos]), k)?
                        .into_iter()
                        .map(|(id, _)| id)
                        .collect()
                }
                None => Vec::new(),
            };
            let set = label_demonstrations(ids[pos], &neighbors, &text, fingerprint, &pool, gateway, &cache)?;
            let resp = gateway.classify(&fields[pos], &text, &set.in_context_order(), 1.0)?;
            Ok(util::argmax(&normalize(&resp)?))
        })
        .collect::<Result<Vec<usize>>>()?;

    let disagreements = reliable
        .iter()
        .filter(|&&p| frozen[p] != Some(labels[p]))
        .count();
    Ok(PredictOutcome {
        prompt,
        prompt_text: text,
        labels,
        disagreements,
    })
}
