//! Variance-reduced policy gradient with projected updates on the simplex.

mod projection;
mod train;

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{clamp_floor, entropy_gradient, Prompt, PromptPolicy, PROB_FLOOR};
use crate::util;

pub use projection::project_simplex;
pub use train::{
    main_loss, predict, train, IterationLog, MainLoss, PredictMode, PredictOutcome, TrainOutcome,
    TrainingTask,
};

/// Margin on the probability gap used by the hinge loss.
pub const HINGE_MARGIN: f64 = 0.5;

/// Per-component bound on gradient magnitude.
pub const GRAD_CLIP: f64 = 1.0 / PROB_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[serde(alias = "cross-entropy")]
    Ce,
    Hinge,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" | "cross-entropy" | "cross_entropy" => Ok(LossKind::Ce),
            "hinge" => Ok(LossKind::Hinge),
            other => Err(Error::invalid(format!("unknown loss {other:?}"))),
        }
    }
}

/// Which derivative of `log Pr(z_i)` the estimator uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreEstimator {
    /// `1/p` at the sampled index and `-1/p` at every other index.
    #[default]
    Verbatim,
    /// `1/p` at the sampled index and zero elsewhere.
    Textbook,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub iterations: u64,
    /// Prompts drawn per iteration (`I`).
    pub samples: usize,
    pub learning_rate: f64,
    pub entropy_weight: f64,
    pub batch_size: usize,
    /// In-context demonstrations per query.
    pub k: usize,
    pub prompt_length: usize,
    pub loss: LossKind,
    pub estimator: ScoreEstimator,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            samples: 4,
            learning_rate: 1e-2,
            entropy_weight: 2e-5,
            batch_size: 16,
            k: 5,
            prompt_length: 5,
            loss: LossKind::Ce,
            estimator: ScoreEstimator::Verbatim,
            seed: 0,
            checkpoint_every: 10,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config(
                "sample count I must be at least 2 (the estimator divides by I - 1)".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.entropy_weight >= 0.0) {
            return Err(Error::Config("entropy weight must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.k == 0 || self.prompt_length == 0 {
            return Err(Error::Config(
                "batch size, K and prompt length must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Loss of a normalized prediction against a target class.
pub fn classification_loss(probs: &[f64], target: usize, kind: LossKind) -> Result<f64> {
    let p_target = *probs.get(target).ok_or_else(|| {
        Error::invalid(format!("target {target} out of range for {} classes", probs.len()))
    })?;
    Ok(match kind {
        LossKind::Ce => -p_target.max(PROB_FLOOR).ln(),
        LossKind::Hinge => {
            let rival = probs
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != target)
                .map(|(_, &p)| p)
                .fold(f64::NEG_INFINITY, f64::max);
            let rival = if rival.is_finite() { rival } else { 0.0 };
            (HINGE_MARGIN - (p_target - rival)).max(0.0)
        }
    })
}

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

/// Derivative of `log Pr(z_i)` with respect to `p_i` at the sampled index.
pub fn score_gradient(probs: &[f64], sampled: usize, estimator: ScoreEstimator) -> Result<Vec<f64>> {
    let p = *probs
        .get(sampled)
        .ok_or_else(|| Error::invalid(format!("sampled index {sampled} out of range")))?;
    if p < PROB_FLOOR && !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("sampled probability {p} clamped to {PROB_FLOOR} in score gradient");
    }
    let inv = 1.0 / p.max(PROB_FLOOR);
    let off = match estimator {
        ScoreEstimator::Verbatim => -inv,
        ScoreEstimator::Textbook => 0.0,
    };
    Ok((0..probs.len())
        .map(|j| if j == sampled { inv } else { off })
        .collect())
}

/// Loss of one sampled prompt (the batch-summed main loss in training).
pub trait PromptLoss: Sync {
    fn loss(&self, prompt: &Prompt) -> Result<f64>;
}

impl<F> PromptLoss for F
where
    F: Fn(&Prompt) -> Result<f64> + Sync,
{
    fn loss(&self, prompt: &Prompt) -> Result<f64> {
        self(prompt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// One gradient vector per prompt position.
    pub per_token: Vec<Vec<f64>>,
    pub mean_loss: f64,
    /// Sample variance of the losses (denominator `I - 1`).
    pub loss_var: f64,
    pub prompts: Vec<Prompt>,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientOptions {
    pub samples: usize,
    pub entropy_weight: f64,
    pub estimator: ScoreEstimator,
}

/// Mean written as `x_0 + mean(x - x_0)` so equal inputs give exactly `x_0`.
fn stable_mean(xs: &[f64]) -> f64 {
    let base = xs[0];
    base + xs.iter().map(|x| x - base).sum::<f64>() / xs.len() as f64
}

/// Draws `I` prompts (prompt `k` from seed `derive(seed, k)`), evaluates them,
/// and forms the baseline-subtracted score-function gradient plus the
/// entropy term. Identical prompts are evaluated once.
pub fn vr_pge_gradient(
    policy: &PromptPolicy,
    seed: u64,
    loss: &dyn PromptLoss,
    options: GradientOptions,
) -> Result<GradientEstimate> {
    let prompts: Vec<Prompt> = (0..options.samples)
        .map(|k| policy.sample_prompt(util::derive_seed(seed, &[k as u64])))
        .collect();
    let losses = evaluate_unique(&prompts, loss)?;
    gradient_from_losses(policy, prompts, losses, options)
}

fn evaluate_unique(prompts: &[Prompt], loss: &dyn PromptLoss) -> Result<Vec<f64>> {
    let mut unique: Vec<&Prompt> = Vec::new();
    let mut slot = Vec::with_capacity(prompts.len());
    for p in prompts {
        match unique.iter().position(|u| *u == p) {
            Some(i) => slot.push(i),
            None => {
                slot.push(unique.len());
                unique.push(p);
            }
        }
    }
    let values = unique
        .par_iter()
        .map(|p| loss.loss(p))
        .collect::<Result<Vec<f64>>>()?;
    Ok(slot.into_iter().map(|i| values[i]).collect())
}

/// The estimator itself, for prompts and losses already in hand.
pub fn gradient_from_losses(
    policy: &PromptPolicy,
    prompts: Vec<Prompt>,
    losses: Vec<f64>,
    options: GradientOptions,
) -> Result<GradientEstimate> {
    let samples = prompts.len();
    if options.samples < 2 || samples < 2 {
        return Err(Error::invalid(
            "the variance-reduced estimator needs at least two samples",
        ));
    }
    if losses.len() != samples {
        return Err(Error::invalid("one loss per sampled prompt is required"));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("prompt losses must be finite"));
    }
    let mean = stable_mean(&losses);
    let scale = 1.0 / (samples - 1) as f64;
    let loss_var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() * scale;

    let mut per_token = Vec::with_capacity(policy.len());
    for (i, dist) in policy.distributions().iter().enumerate() {
        let probs = dist.probs();
        let mut g = vec![0.0; probs.len()];
        for (prompt, &l) in prompts.iter().zip(&losses) {
            let advantage = l - mean;
            if advantage == 0.0 {
                continue;
            }
            let s = score_gradient(probs, prompt.indices[i], options.estimator)?;
            for (gj, sj) in g.iter_mut().zip(s) {
                *gj += scale * advantage * sj;
            }
        }
        if options.entropy_weight > 0.0 {
            let h = entropy_gradient(&clamp_floor(probs))?;
            for (gj, hj) in g.iter_mut().zip(h) {
                *gj += options.entropy_weight * hj;
            }
        }
        g.iter_mut().for_each(|x| *x = x.clamp(-GRAD_CLIP, GRAD_CLIP));
        per_token.push(g);
    }
    Ok(GradientEstimate {
        per_token,
        mean_loss: mean,
        loss_var,
        prompts,
        losses,
    })
}

/// `p_i <- proj(p_i - lr * g_i)` for every position.
pub fn step(policy: &PromptPolicy, grad: &GradientEstimate, learning_rate: f64) -> Result<PromptPolicy> {
    if grad.per_token.len() != policy.len() {
        return Err(Error::invalid(format!(
            "gradient has {} positions, policy has {}",
            grad.per_token.len(),
            policy.len()
        )));
    }
    let mut next = policy.clone();
    for (dist, g) in next.distributions_mut().iter_mut().zip(&grad.per_token) {
        if g.len() != dist.len() {
            return Err(Error::invalid("gradient and distribution sizes differ"));
        }
        let moved: Vec<f64> = dist
            .probs()
            .iter()
            .zip(g)
            .map(|(p, gj)| p - learning_rate * gj)
            .collect();
        *dist = project_simplex(&moved)?;
    }
    Ok(next)
}
