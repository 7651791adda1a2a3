//! The learnable prompt: one categorical distribution per prompt position.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// Floor applied to probabilities before taking logs or reciprocals.
pub const PROB_FLOOR: f64 = 1e-8;

/// Tolerance on the unit-sum constraint.
pub const SIMPLEX_TOL: f64 = 1e-9;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered, duplicate-free list of candidate prompt n-grams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    entries: Vec<String>,
}

impl Vocabulary {
    pub fn new(entries: Vec<String>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("vocabulary must contain at least one entry"));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.trim().is_empty() {
                return Err(Error::invalid("vocabulary entries must be nonempty"));
            }
            if !seen.insert(e.as_str()) {
                return Err(Error::invalid(format!("duplicate vocabulary entry {e:?}")));
            }
        }
        if !(50..=200).contains(&entries.len()) {
            log::warn!(
                "vocabulary size {} is outside the recommended range [50, 200]",
                entries.len()
            );
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(String::as_str)
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(entries: Vec<String>) -> Result<Self> {
        Vocabulary::new(entries)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.entries
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("distribution size must be at least 1"));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    /// Validates nonnegativity and unit sum.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("distribution size must be at least 1"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("probabilities must be finite and nonnegative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_projection(probs: Vec<f64>) -> Self {
        debug_assert!(probs.iter().all(|p| *p >= 0.0));
        Self { probs }
    }

    pub fn one_hot(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::invalid(format!("index {index} out of range for size {n}")));
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Shannon entropy in nats, with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }

    /// Inverse-CDF draw from a uniform variate in `[0, 1)`.
    fn draw(&self, u: f64) -> usize {
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (j, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = j;
                cum += p;
                if u < cum {
                    return j;
                }
            }
        }
        last_positive
    }
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Gradient of the entropy, `-log p_j - 1`. Requires strictly positive input;
/// callers clamp to [`PROB_FLOOR`] first.
pub fn entropy_gradient(probs: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = probs.iter().find(|&&p| !(p > 0.0)) {
        return Err(Error::invalid(format!(
            "entropy gradient requires positive probabilities, got {p}"
        )));
    }
    Ok(probs.iter().map(|p| -p.ln() - 1.0).collect())
}

pub fn clamp_floor(probs: &[f64]) -> Vec<f64> {
    probs.iter().map(|p| p.max(PROB_FLOOR)).collect()
}

/// Indices into the vocabulary, one per prompt position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    pub indices: Vec<usize>,
}

impl Prompt {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn tokens<'v>(&self, vocab: &'v Vocabulary) -> Result<Vec<&'v str>> {
        self.indices
            .iter()
            .map(|&i| {
                vocab.get(i).ok_or_else(|| {
                    Error::invalid(format!(
                        "prompt index {i} out of range for vocabulary of size {}",
                        vocab.len()
                    ))
                })
            })
            .collect()
    }

    /// Space-joined prompt text.
    pub fn render(&self, vocab: &Vocabulary) -> Result<String> {
        Ok(self.tokens(vocab)?.join(" "))
    }

    /// Stable hash used to key per-prompt caches.
    pub fn fingerprint(&self) -> u64 {
        let bytes: Vec<u8> = self
            .indices
            .iter()
            .flat_map(|&i| (i as u64).to_le_bytes())
            .collect();
        util::hash64(&bytes)
    }
}

/// `m` independent categorical distributions over a shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPolicy {
    distributions: Vec<TokenDistribution>,
}

impl PromptPolicy {
    pub fn new_uniform(vocab_size: usize, length: usize) -> Result<Self> {
        if vocab_size == 0 || length == 0 {
            return Err(Error::invalid(format!(
                "policy needs N >= 1 and m >= 1 (got N = {vocab_size}, m = {length})"
            )));
        }
        let row = TokenDistribution::uniform(vocab_size)?;
        Ok(Self {
            distributions: vec![row; length],
        })
    }

    pub fn from_distributions(distributions: Vec<TokenDistribution>) -> Result<Self> {
        let first = distributions
            .first()
            .ok_or_else(|| Error::invalid("policy needs at least one position"))?;
        let n = first.len();
        if distributions.iter().any(|d| d.len() != n) {
            return Err(Error::invalid("all positions must share the vocabulary size"));
        }
        Ok(Self { distributions })
    }

    /// Prompt length `m`.
    pub fn len(&self) -> usize {
        self.distributions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distributions.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.distributions[0].len()
    }

    pub fn distributions(&self) -> &[TokenDistribution] {
        &self.distributions
    }

    pub(crate) fn distributions_mut(&mut self) -> &mut [TokenDistribution] {
        &mut self.distributions
    }

    pub fn sample_prompt(&self, seed: u64) -> Prompt {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let indices = self
            .distributions
            .iter()
            .map(|d| d.draw(rng.random::<f64>()))
            .collect();
        Prompt { indices }
    }

    /// Per-position argmax, lowest index on ties.
    pub fn mode_prompt(&self) -> Prompt {
        Prompt {
            indices: self
                .distributions
                .iter()
                .map(|d| util::argmax(d.probs()))
                .collect(),
        }
    }

    /// `sum_i log p_{i, j_i}`; negative infinity when any factor is zero.
    pub fn log_prob(&self, prompt: &Prompt) -> Result<f64> {
        if prompt.len() != self.len() {
            return Err(Error::invalid(format!(
                "prompt length {} does not match policy length {}",
                prompt.len(),
                self.len()
            )));
        }
        let mut total = 0.0;
        for (d, &j) in self.distributions.iter().zip(&prompt.indices) {
            let p = *d
                .probs()
                .get(j)
                .ok_or_else(|| Error::invalid(format!("prompt index {j} out of range")))?;
            if p <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += p.ln();
        }
        Ok(total)
    }

    pub fn mean_entropy(&self) -> f64 {
        self.distributions.iter().map(|d| d.entropy()).sum::<f64>() / self.len() as f64
    }

    pub fn to_checkpoint(&self, vocab_hash: &str) -> PolicyCheckpoint {
        PolicyCheckpoint {
            version: CHECKPOINT_VERSION,
            m: self.len(),
            n: self.vocab_size(),
            vocab_hash: vocab_hash.to_string(),
            rows: self.distributions.iter().map(|d| d.probs.clone()).collect(),
            iteration: 0,
            config_hash: None,
        }
    }
}

/// On-disk policy checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub vocab_hash: String,
    pub rows: Vec<Vec<f64>>,
    /// Number of completed training iterations.
    #[serde(default)]
    pub iteration: u64,
    #[serde(default)]
    pub config_hash: Option<String>,
}

impl PolicyCheckpoint {
    pub fn to_policy(&self) -> Result<PromptPolicy> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.rows.len() != self.m {
            return Err(Error::invalid(format!(
                "checkpoint declares m = {} but has {} rows",
                self.m,
                self.rows.len()
            )));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                if r.len() != self.n {
                    return Err(Error::invalid(format!(
                        "checkpoint row has {} entries, expected N = {}",
                        r.len(),
                        self.n
                    )));
                }
                TokenDistribution::new(r.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        PromptPolicy::from_distributions(rows)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
