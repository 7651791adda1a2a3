//! K-nearest in-context demonstrations and their prompt-conditioned labels.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::http::{fetch_embedding, HttpConfig, Transport, UreqTransport};
use crate::gateway::{Demonstration, Fields, Gateway, RetryPolicy};
use crate::util;
use crate::vocab::tokenize;

pub const LOCAL_EMBEDDING_DIM: usize = 512;

/// Sentence encoder used for neighbor search.
pub trait EmbeddingProvider: Send + Sync {
    fn kind(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Hashed bag-of-words TF-IDF, L2-normalized. IDF is fitted on the corpus.
#[derive(Debug, Clone)]
pub struct HashedTfIdf {
    dim: usize,
    docs: usize,
    doc_freq: HashMap<String, usize>,
}

impl HashedTfIdf {
    pub fn fit<S: AsRef<str>>(corpus: &[S], dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            let words: HashSet<String> = tokenize(text.as_ref()).into_iter().collect();
            for w in words {
                *doc_freq.entry(w).or_default() += 1;
            }
        }
        Ok(Self {
            dim,
            docs: corpus.len(),
            doc_freq,
        })
    }

    fn idf(&self, word: &str) -> f64 {
        let df = self.doc_freq.get(word).copied().unwrap_or(0);
        ((1.0 + self.docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    pub fn bucket(&self, word: &str) -> usize {
        (util::hash64(word.as_bytes()) % self.dim as u64) as usize
    }
}

impl EmbeddingProvider for HashedTfIdf {
    fn kind(&self) -> &str {
        "local-tfidf"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let words = tokenize(text);
        if words.is_empty() {
            return Err(Error::invalid("cannot embed text without words"));
        }
        let mut tf: HashMap<&str, f64> = HashMap::new();
        for w in &words {
            *tf.entry(w.as_str()).or_default() += 1.0;
        }
        let mut v = vec![0.0; self.dim];
        for (w, count) in tf {
            v[self.bucket(w)] += count * self.idf(w);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

/// Embeddings from an OpenAI-compatible `/embeddings` endpoint.
pub struct RemoteEmbedding {
    config: HttpConfig,
    api_key: String,
    transport: Box<dyn Transport>,
    retry: RetryPolicy,
    dim: usize,
}

impl RemoteEmbedding {
    pub fn from_env(config: HttpConfig, dim: usize) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            crate::error::GatewayError::MissingApiKey(config.api_key_env.clone())
        })?;
        let transport = UreqTransport::new(std::time::Duration::from_secs(config.timeout_secs));
        Ok(Self::with_transport(config, api_key, transport, dim))
    }

    pub fn with_transport(
        config: HttpConfig,
        api_key: impl Into<String>,
        transport: impl Transport + 'static,
        dim: usize,
    ) -> Self {
        Self {
            config,
            api_key: api_key.into(),
            transport: Box::new(transport),
            retry: RetryPolicy::default(),
            dim,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl EmbeddingProvider for RemoteEmbedding {
    fn kind(&self) -> &str {
        "remote-api"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::invalid("cannot embed empty text"));
        }
        let mut attempt = 0;
        loop {
            match fetch_embedding(self.transport.as_ref(), &self.config, &self.api_key, text) {
                Ok(v) => {
                    if v.len() != self.dim || v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::invalid(format!(
                            "remote embedding has {} finite-checked components, expected {}",
                            v.len(),
                            self.dim
                        )));
                    }
                    return Ok(v);
                }
                Err(e) if e.is_retryable() && attempt + 1 < self.retry.max_attempts => {
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Exact Euclidean neighbor search over every example.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    ids: Vec<u64>,
    vectors: Vec<Vec<f64>>,
    position: HashMap<u64, usize>,
}

impl NeighborIndex {
    pub fn new(ids: Vec<u64>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::invalid("ids and vectors differ in length"));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors
            .iter()
            .any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::invalid("embeddings must be finite and equally sized"));
        }
        let mut position = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if position.insert(id, i).is_some() {
                return Err(Error::invalid(format!("duplicate example id {id}")));
            }
        }
        Ok(Self {
            ids,
            vectors,
            position,
        })
    }

    /// Embeds `texts` in parallel and indexes them under `ids`.
    pub fn build(
        ids: Vec<u64>,
        texts: &[String],
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self> {
        use rayon::prelude::*;
        let vectors = texts
            .par_iter()
            .map(|t| provider.embed(t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ids, vectors)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vector(&self, id: u64) -> Option<&[f64]> {
        self.position.get(&id).map(|&i| self.vectors[i].as_slice())
    }

    /// The `k` nearest other examples to `query_id`, ascending distance,
    /// ties by id.
    pub fn knn(&self, query_id: u64, k: usize) -> Result<Vec<u64>> {
        let q = self
            .vector(query_id)
            .ok_or_else(|| Error::invalid(format!("example {query_id} is not indexed")))?;
        self.knn_vector(q, Some(query_id), k)
            .map(|v| v.into_iter().map(|(id, _)| id).collect())
    }

    /// Nearest neighbors of an arbitrary vector with distances.
    pub fn knn_vector(&self, query: &[f64], exclude: Option<u64>, k: usize) -> Result<Vec<(u64, f64)>> {
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        let mut scored: Vec<(u64, f64)> = self
            .ids
            .iter()
            .zip(&self.vectors)
            .filter(|(id, _)| Some(**id) != exclude)
            .map(|(&id, v)| (id, euclidean(query, v)))
            .collect();
        if k > scored.len() {
            log::warn!(
                "K = {k} exceeds the {} available neighbors; using all of them",
                scored.len()
            );
        }
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub example_id: u64,
    pub provider: String,
    pub d: usize,
    pub vector: Vec<f64>,
}

pub fn write_embedding_cache(path: &Path, provider: &str, index: &NeighborIndex) -> Result<()> {
    let mut out = String::new();
    for (&id, v) in index.ids.iter().zip(&index.vectors) {
        let rec = EmbeddingRecord {
            example_id: id,
            provider: provider.to_string(),
            d: v.len(),
            vector: v.clone(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    util::write_atomic(path, out.as_bytes())
}

pub fn read_embedding_cache(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Examples available as demonstrations, with frozen labels for the
/// reliable ones.
#[derive(Debug, Clone)]
pub struct DemoPool<'a> {
    fields: &'a [Fields],
    frozen: &'a [Option<usize>],
    position: HashMap<u64, usize>,
}

impl<'a> DemoPool<'a> {
    pub fn new(ids: &[u64], fields: &'a [Fields], frozen: &'a [Option<usize>]) -> Result<Self> {
        if ids.len() != fields.len() || ids.len() != frozen.len() {
            return Err(Error::invalid("demo pool slices differ in length"));
        }
        Ok(Self {
            fields,
            frozen,
            position: ids.iter().enumerate().map(|(i, &id)| (id, i)).collect(),
        })
    }

    fn lookup(&self, id: u64) -> Result<usize> {
        self.position
            .get(&id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown example id {id}")))
    }
}

/// Labels already assigned per (example id, prompt fingerprint).
#[derive(Debug, Default)]
pub struct LabelCache {
    inner: Mutex<HashMap<(u64, u64), usize>>,
}

impl LabelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("label cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: (u64, u64)) -> Option<usize> {
        self.inner.lock().expect("label cache poisoned").get(&key).copied()
    }

    fn insert(&self, key: (u64, u64), label: usize) {
        self.inner
            .lock()
            .expect("label cache poisoned")
            .insert(key, label);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationSet {
    pub query_id: u64,
    /// Ascending distance from the query.
    pub demos: Vec<Demonstration>,
    pub prompt_fingerprint: u64,
}

impl DemonstrationSet {
    /// Order used in the model input: farthest first, so the closest
    /// demonstration sits right above the query.
    pub fn in_context_order(&self) -> Vec<Demonstration> {
        self.demos.iter().rev().cloned().collect()
    }
}

/// Labels the neighbors of one query. Reliable neighbors keep their frozen
/// zero-shot label; the rest are classified under the prompt alone.
pub fn label_demonstrations(
    query_id: u64,
    neighbors: &[u64],
    prompt_text: &str,
    prompt_fingerprint: u64,
    pool: &DemoPool<'_>,
    gateway: &Gateway,
    cache: &LabelCache,
) -> Result<DemonstrationSet> {
    let mut demos = Vec::with_capacity(neighbors.len());
    for &id in neighbors {
        if id == query_id {
            continue;
        }
        let pos = pool.lookup(id)?;
        let label = match pool.frozen[pos] {
            Some(label) => label,
            None => match cache.get((id, prompt_fingerprint)) {
                Some(label) => label,
                None => {
                    let resp = gateway.classify(&pool.fields[pos], prompt_text, &[], 1.0)?;
                    let label = util::argmax(&resp.scores);
                    cache.insert((id, prompt_fingerprint), label);
                    label
                }
            },
        };
        demos.push(Demonstration {
            fields: pool.fields[pos].clone(),
            pseudo_label: label,
        });
    }
    Ok(DemonstrationSet {
        query_id,
        demos,
        prompt_fingerprint,
    })
}
