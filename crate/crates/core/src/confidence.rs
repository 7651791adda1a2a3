//! Zero-shot pseudo labels, confidence scores and the reliable set.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{ClassifierResponse, Fields, Gateway};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceMode {
    /// Temperature-averaged linguistic confidence.
    Lg,
    /// Bias-reduced confidence against random-context responses.
    Rd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceConfig {
    pub temperatures: Vec<f64>,
    pub gamma: f64,
    pub num_random_contexts: usize,
    pub mode: ConfidenceMode,
    /// Keep the unbounded ratio instead of normalizing it.
    pub raw_rd: bool,
    /// Use the normalized t = 1 distribution as the RD numerator instead of
    /// the greedy one-hot.
    pub soft_numerator: bool,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self {
            temperatures: vec![0.5, 1.0, 1.5],
            gamma: 0.7,
            num_random_contexts: 8,
            mode: ConfidenceMode::Lg,
            raw_rd: false,
            soft_numerator: false,
        }
    }
}

impl ConfidenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperatures.is_empty() {
            return Err(Error::Config("temperature set must be nonempty".into()));
        }
        if self.temperatures.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.mode == ConfidenceMode::Rd && self.num_random_contexts == 0 {
            return Err(Error::Config("RD mode needs at least one random context".into()));
        }
        Ok(())
    }
}

/// Scores divided by their sum.
pub fn normalize(response: &ClassifierResponse) -> Result<Vec<f64>> {
    normalize_scores(&response.scores)
}

pub fn normalize_scores(scores: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::invalid("cannot normalize an all-zero score vector"));
    }
    Ok(scores.iter().map(|s| s / total).collect())
}

fn max_with_class(values: &[f64]) -> (f64, usize) {
    let c = util::argmax(values);
    (values[c], c)
}

/// Mean of the normalized distributions across `temperatures`; returns the
/// largest component and its class.
pub fn lg_score(
    gateway: &Gateway,
    query: &Fields,
    prompt_text: &str,
    temperatures: &[f64],
) -> Result<(f64, usize)> {
    if temperatures.is_empty() {
        return Err(Error::invalid("temperature set must be nonempty"));
    }
    let mut mean = vec![0.0; gateway.labels().len()];
    for &t in temperatures {
        let probs = normalize(&gateway.classify(query, prompt_text, &[], t)?)?;
        for (m, p) in mean.iter_mut().zip(probs) {
            *m += p;
        }
    }
    let k = temperatures.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    Ok(max_with_class(&mean))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RdOptions {
    pub raw: bool,
    pub soft_numerator: bool,
}

/// Ratio of the greedy prediction to the mean random-context prediction,
/// normalized to a distribution unless `raw` is set.
pub fn rd_score(
    gateway: &Gateway,
    query: &Fields,
    prompt_text: &str,
    temperatures: &[f64],
    random_contexts: &[&Fields],
    options: RdOptions,
) -> Result<(f64, usize)> {
    if temperatures.is_empty() {
        return Err(Error::invalid("temperature set must be nonempty"));
    }
    if random_contexts.is_empty() {
        return Err(Error::invalid("RD scoring needs at least one random context"));
    }
    let numerator = if options.soft_numerator {
        normalize(&gateway.classify(query, prompt_text, &[], 1.0)?)?
    } else {
        normalize(&gateway.classify(query, prompt_text, &[], 0.0)?)?
    };
    let classes = gateway.labels().len();
    let mut baseline = vec![0.0; classes];
    for ctx in random_contexts {
        for &t in temperatures {
            let probs = normalize(&gateway.classify(ctx, prompt_text, &[], t)?)?;
            for (b, p) in baseline.iter_mut().zip(probs) {
                *b += p;
            }
        }
    }
    let draws = (random_contexts.len() * temperatures.len()) as f64;
    baseline.iter_mut().for_each(|b| *b /= draws);
    rd_from_distributions(&numerator, &baseline, options.raw)
}

/// The arithmetic behind [`rd_score`], for precomputed distributions.
pub fn rd_from_distributions(numerator: &[f64], baseline: &[f64], raw: bool) -> Result<(f64, usize)> {
    if numerator.len() != baseline.len() {
        return Err(Error::invalid("numerator and baseline lengths differ"));
    }
    let ratios: Vec<f64> = numerator
        .iter()
        .zip(baseline)
        .map(|(n, b)| n / b.max(f64::MIN_POSITIVE))
        .collect();
    if raw {
        return Ok(max_with_class(&ratios));
    }
    Ok(max_with_class(&normalize_scores(&ratios)?))
}

/// `r` distinct corpus indices, never `exclude` when avoidable.
pub fn sample_random_contexts(corpus_len: usize, r: usize, exclude: Option<usize>, seed: u64) -> Vec<usize> {
    let pool: Vec<usize> = (0..corpus_len)
        .filter(|&i| Some(i) != exclude || corpus_len == 1)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = r.min(pool.len());
    index::sample(&mut rng, pool.len(), take)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub example_id: u64,
    pub text_hash: String,
    pub zero_shot_label: usize,
    pub c_lg: Option<f64>,
    pub c_rd: Option<f64>,
    pub reliable: bool,
    pub learned_label: Option<usize>,
}

impl PseudoLabelRecord {
    pub fn confidence(&self, mode: ConfidenceMode) -> Option<f64> {
        match mode {
            ConfidenceMode::Lg => self.c_lg,
            ConfidenceMode::Rd => self.c_rd,
        }
    }
}

/// Scores one example: zero-shot label at t = 1, LG always, RD when asked.
pub fn score_example(
    gateway: &Gateway,
    example_id: u64,
    text_hash: String,
    query: &Fields,
    random_contexts: &[&Fields],
    config: &ConfidenceConfig,
) -> Result<PseudoLabelRecord> {
    let direct = normalize(&gateway.classify(query, "", &[], 1.0)?)?;
    let zero_shot_label = util::argmax(&direct);
    let (c_lg, _) = lg_score(gateway, query, "", &config.temperatures)?;
    let c_rd = match config.mode {
        ConfidenceMode::Rd => Some(
            rd_score(
                gateway,
                query,
                "",
                &config.temperatures,
                random_contexts,
                RdOptions {
                    raw: config.raw_rd,
                    soft_numerator: config.soft_numerator,
                },
            )?
            .0,
        ),
        ConfidenceMode::Lg => None,
    };
    Ok(PseudoLabelRecord {
        example_id,
        text_hash,
        zero_shot_label,
        c_lg: Some(c_lg),
        c_rd,
        reliable: false,
        learned_label: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliableSummary {
    pub gamma: f64,
    pub count: usize,
    pub total: usize,
    pub per_class: Vec<usize>,
    /// Positions (not ids) of the reliable records.
    pub indices: Vec<usize>,
}

/// Flags records with confidence at or above `gamma` (inclusive).
pub fn select_reliable(
    records: &mut [PseudoLabelRecord],
    gamma: f64,
    mode: ConfidenceMode,
    classes: usize,
) -> Result<ReliableSummary> {
    let mut per_class = vec![0; classes];
    let mut indices = Vec::new();
    for (i, r) in records.iter_mut().enumerate() {
        let score = r.confidence(mode).ok_or_else(|| {
            Error::invalid(format!(
                "record {} has no {mode:?} confidence score",
                r.example_id
            ))
        })?;
        r.reliable = score >= gamma;
        if r.reliable {
            indices.push(i);
            if let Some(slot) = per_class.get_mut(r.zero_shot_label) {
                *slot += 1;
            }
        }
    }
    if indices.is_empty() {
        return Err(Error::EmptyReliableSet { gamma });
    }
    Ok(ReliableSummary {
        gamma,
        count: indices.len(),
        total: records.len(),
        per_class,
        indices,
    })
}
