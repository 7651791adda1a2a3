//! Candidate prompt vocabulary from PMI-guided segmentation of the task corpus.
//!
//! Sentences are tokenized by lowercasing and replacing every character that is
//! neither alphanumeric nor whitespace with a space. Adjacent words whose
//! corpus-level PMI reaches the threshold are merged left to right into one
//! n-gram; frequent n-grams form the vocabulary.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Vocabulary;
use crate::util;

pub const VOCAB_FILE_VERSION: u32 = 1;

pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    cleaned
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NgramStats {
    pub unigram_counts: BTreeMap<String, u64>,
    pub bigram_counts: BTreeMap<(String, String), u64>,
    pub total_unigrams: u64,
    pub total_bigrams: u64,
}

impl NgramStats {
    fn add_sentence(&mut self, words: &[String]) {
        for w in words {
            *self.unigram_counts.entry(w.clone()).or_default() += 1;
        }
        for pair in words.windows(2) {
            *self
                .bigram_counts
                .entry((pair[0].clone(), pair[1].clone()))
                .or_default() += 1;
        }
        self.total_unigrams += words.len() as u64;
        self.total_bigrams += words.len().saturating_sub(1) as u64;
    }

    pub fn merge(mut self, other: NgramStats) -> NgramStats {
        for (w, c) in other.unigram_counts {
            *self.unigram_counts.entry(w).or_default() += c;
        }
        for (b, c) in other.bigram_counts {
            *self.bigram_counts.entry(b).or_default() += c;
        }
        self.total_unigrams += other.total_unigrams;
        self.total_bigrams += other.total_bigrams;
        self
    }

    fn unigram_prob(&self, word: &str) -> Option<f64> {
        self.unigram_counts
            .get(word)
            .map(|&c| c as f64 / self.total_unigrams as f64)
    }
}

/// Counts words and within-sentence adjacent pairs.
pub fn count_ngrams<S: AsRef<str>>(corpus: &[S]) -> Result<NgramStats> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot count n-grams of an empty corpus"));
    }
    let mut stats = NgramStats::default();
    for sentence in corpus {
        stats.add_sentence(&tokenize(sentence.as_ref()));
    }
    Ok(stats)
}

/// `log(Pr(x1, x2) / (Pr(x1) Pr(x2)))`; negative infinity for unseen pairs.
pub fn pmi(x1: &str, x2: &str, stats: &NgramStats) -> Result<f64> {
    let p1 = stats
        .unigram_prob(x1)
        .ok_or_else(|| Error::invalid(format!("unknown word {x1:?}")))?;
    let p2 = stats
        .unigram_prob(x2)
        .ok_or_else(|| Error::invalid(format!("unknown word {x2:?}")))?;
    let joint = stats
        .bigram_counts
        .get(&(x1.to_string(), x2.to_string()))
        .copied()
        .unwrap_or(0);
    if joint == 0 || stats.total_bigrams == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let pj = joint as f64 / stats.total_bigrams as f64;
    Ok((pj / (p1 * p2)).ln())
}

/// Splits a sentence into n-grams; unknown words never merge.
pub fn segment(sentence: &str, stats: &NgramStats, pmi_threshold: f64) -> Vec<String> {
    segment_words(&tokenize(sentence), stats, pmi_threshold)
}

fn segment_words(words: &[String], stats: &NgramStats, pmi_threshold: f64) -> Vec<String> {
    let mut out = Vec::new();
    let Some(first) = words.first() else {
        return out;
    };
    let mut current = first.clone();
    for pair in words.windows(2) {
        let score = pmi(&pair[0], &pair[1], stats).unwrap_or(f64::NEG_INFINITY);
        if score >= pmi_threshold {
            current.push(' ');
            current.push_str(&pair[1]);
        } else {
            out.push(std::mem::replace(&mut current, pair[1].clone()));
        }
    }
    out.push(current);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabParams {
    pub delta: u64,
    pub pmi_threshold: f64,
    pub n_max: usize,
}

impl Default for VocabParams {
    fn default() -> Self {
        Self {
            delta: 5,
            pmi_threshold: 0.0,
            n_max: 200,
        }
    }
}

/// Segments every sentence, keeps n-grams seen at least `delta` times, and
/// returns the `n_max` most frequent (ties broken lexicographically).
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[S], params: &VocabParams) -> Result<Vocabulary> {
    if params.n_max == 0 {
        return Err(Error::invalid("n_max must be at least 1"));
    }
    let stats = count_ngrams(corpus)?;
    let mut freq: HashMap<String, u64> = HashMap::new();
    for sentence in corpus {
        for gram in segment(sentence.as_ref(), &stats, params.pmi_threshold) {
            *freq.entry(gram).or_default() += 1;
        }
    }
    let mut survivors: Vec<(String, u64)> = freq
        .into_iter()
        .filter(|(_, c)| *c >= params.delta)
        .collect();
    if survivors.is_empty() {
        return Err(Error::Build(format!(
            "no n-gram occurs at least {} times; lower delta",
            params.delta
        )));
    }
    survivors.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    survivors.truncate(params.n_max);
    Vocabulary::new(survivors.into_iter().map(|(g, _)| g).collect())
}

/// Serialized vocabulary. Its SHA-256 is the `vocab_hash` recorded in policy
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyFile {
    pub version: u32,
    pub params: VocabParams,
    pub entries: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl VocabularyFile {
    pub fn new(vocab: &Vocabulary, params: VocabParams) -> Self {
        Self {
            version: VOCAB_FILE_VERSION,
            params,
            entries: vocab.entries().to_vec(),
            config_hash: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Content hash; the run config hash is not part of it.
    pub fn hash(&self) -> Result<String> {
        let bare = VocabularyFile {
            config_hash: None,
            ..self.clone()
        };
        Ok(util::sha256_hex(bare.to_json()?.as_bytes()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_str(text)?;
        if file.version != VOCAB_FILE_VERSION {
            return Err(Error::invalid(format!(
                "unsupported vocabulary file version {}",
                file.version
            )));
        }
        Ok(file)
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.entries.clone())
    }
}
