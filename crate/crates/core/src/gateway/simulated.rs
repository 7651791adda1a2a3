//! Deterministic stand-in for a language model.
//!
//! For label word `c` the simulated logit is
//!
//! ```text
//! (w_query + w_focus * focus(z)) * evidence_c(x)
//!     + w_overlap * cue_c(z) + w_demo * agreement_c(D) + bias_c + noise_c(x)
//! ```
//!
//! where `evidence_c(x)` counts query words from the class lexicon,
//! `focus(z)` is the fraction of prompt words that are focus words,
//! `cue_c(z)` the fraction of prompt words that are class-`c` cue words,
//! `agreement_c(D)` the fraction of demonstrations labeled `c`, and
//! `noise_c(x)` a seeded Gaussian draw fixed per (query, label word).
//! Scores are `temperature_scale(logits, t)`. Every per-class quantity is
//! keyed by label word, so permuting the label space permutes the scores.

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{temperature_scale, Backend, ClassifierResponse, ClassifyRequest};
use crate::error::GatewayError;
use crate::util;
use crate::vocab::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    /// Evidence words per label word.
    pub lexicon: BTreeMap<String, Vec<String>>,
    /// Prompt words that sharpen the model's use of query evidence.
    pub focus_words: Vec<String>,
    /// Prompt words that push toward one label word.
    pub cue_words: BTreeMap<String, Vec<String>>,
    pub bias: BTreeMap<String, f64>,
    pub w_query: f64,
    pub w_focus: f64,
    pub w_overlap: f64,
    pub w_demo: f64,
    pub noise_sd: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lexicon: BTreeMap::new(),
            focus_words: Vec::new(),
            cue_words: BTreeMap::new(),
            bias: BTreeMap::new(),
            w_query: 0.5,
            w_focus: 3.0,
            w_overlap: 0.5,
            w_demo: 1.0,
            noise_sd: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedBackend {
    config: SimConfig,
    focus: HashSet<String>,
}

impl SimulatedBackend {
    pub fn new(config: SimConfig) -> Self {
        let focus = config
            .focus_words
            .iter()
            .map(|w| w.to_lowercase())
            .collect();
        Self { config, focus }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn noise(&self, query_words: &[String], label: &str) -> f64 {
        if self.config.noise_sd == 0.0 {
            return 0.0;
        }
        let key = format!("{}\u{1}{}\u{1}{}", self.config.seed, query_words.join(" "), label);
        let mut rng = ChaCha8Rng::seed_from_u64(util::hash64(key.as_bytes()));
        let z: f64 = StandardNormal.sample(&mut rng);
        self.config.noise_sd * z
    }

    /// Logits for a request, one per label word.
    pub fn logits(&self, request: &ClassifyRequest<'_>) -> Vec<f64> {
        let query_words: Vec<String> = request
            .query
            .values()
            .flat_map(|v| tokenize(v))
            .collect();
        let prompt_words = tokenize(request.prompt_text);
        let frac = |set: &dyn Fn(&str) -> bool| {
            if prompt_words.is_empty() {
                0.0
            } else {
                prompt_words.iter().filter(|w| set(w)).count() as f64 / prompt_words.len() as f64
            }
        };
        let focus = frac(&|w| self.focus.contains(w));
        let gain = self.config.w_query + self.config.w_focus * focus;

        request
            .labels
            .words()
            .iter()
            .map(|label| {
                let lexicon = self.config.lexicon.get(label);
                let evidence = lexicon.map_or(0.0, |lex| {
                    query_words
                        .iter()
                        .filter(|w| lex.iter().any(|l| l.eq_ignore_ascii_case(w)))
                        .count() as f64
                });
                let cue = self.config.cue_words.get(label).map_or(0.0, |cues| {
                    frac(&|w| cues.iter().any(|c| c.eq_ignore_ascii_case(w)))
                });
                let agreement = if request.demos.is_empty() {
                    0.0
                } else {
                    request
                        .demos
                        .iter()
                        .filter(|d| request.labels.word(d.pseudo_label) == Some(label.as_str()))
                        .count() as f64
                        / request.demos.len() as f64
                };
                let bias = self.config.bias.get(label).copied().unwrap_or(0.0);
                gain * evidence
                    + self.config.w_overlap * cue
                    + self.config.w_demo * agreement
                    + bias
                    + self.noise(&query_words, label)
            })
            .collect()
    }
}

impl Backend for SimulatedBackend {
    fn id(&self) -> String {
        let cfg = serde_json::to_vec(&self.config).unwrap_or_default();
        format!("sim-{}", &util::sha256_hex(&cfg)[..16])
    }

    fn classify(
        &self,
        request: &ClassifyRequest<'_>,
    ) -> Result<ClassifierResponse, GatewayError> {
        let logits = self.logits(request);
        let scores = temperature_scale(&logits, request.temperature)
            .map_err(|e| GatewayError::Protocol(e.to_string()))?;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        Ok(ClassifierResponse {
            scores,
            raw_logprobs: Some(logits.iter().map(|l| l - log_norm).collect()),
            missing_labels: Vec::new(),
        })
    }
}
