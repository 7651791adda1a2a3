//! Black-box classification interface `f(x, z, D)`.
//!
//! A [`Backend`] turns one assembled request into a score vector over the
//! task's label words. [`Gateway`] wraps a backend with response caching, a
//! hard call budget, retries and optional rate limiting.

pub mod http;
pub mod simulated;
mod template;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, GatewayError, Result};
use crate::util;

pub use template::{
    builtin_labels, Fields, LabelSpace, TaskTemplate, BUILTIN_TASKS, OPTIONS_PLACEHOLDER,
};

/// Mass assigned to a label word the backend did not report.
pub const MISSING_LABEL_FLOOR: f64 = 1e-6;

/// One in-context example with its class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub fields: Fields,
    pub pseudo_label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierResponse {
    /// Nonnegative mass per label word.
    pub scores: Vec<f64>,
    #[serde(default)]
    pub raw_logprobs: Option<Vec<f64>>,
    /// Classes that were absent from the backend output and received the floor.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_labels: Vec<usize>,
}

impl ClassifierResponse {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        Self {
            scores,
            raw_logprobs: None,
            missing_labels: Vec::new(),
        }
    }

    fn validate(&self, classes: usize) -> std::result::Result<(), GatewayError> {
        if self.scores.len() != classes {
            return Err(GatewayError::Protocol(format!(
                "expected {classes} scores, got {}",
                self.scores.len()
            )));
        }
        if self.scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(GatewayError::Protocol(
                "scores must be finite and nonnegative".into(),
            ));
        }
        if self.scores.iter().all(|s| *s == 0.0) {
            return Err(GatewayError::Protocol("scores are all zero".into()));
        }
        Ok(())
    }
}

/// Builds the text sent to the model: the prompt line, one line block per
/// demonstration ending in its label word, then the open query.
pub fn assemble_input(
    query: &Fields,
    prompt_text: &str,
    demos: &[Demonstration],
    template: &TaskTemplate,
    labels: &LabelSpace,
) -> Result<String> {
    let mut blocks = Vec::with_capacity(demos.len() + 2);
    if !prompt_text.is_empty() {
        blocks.push(prompt_text.to_string());
    }
    for demo in demos {
        let word = labels.word(demo.pseudo_label).ok_or_else(|| {
            Error::invalid(format!(
                "demonstration label {} out of range for {} classes",
                demo.pseudo_label,
                labels.len()
            ))
        })?;
        blocks.push(format!("{} {word}", template.render(&demo.fields, labels)?));
    }
    blocks.push(template.render(query, labels)?);
    Ok(blocks.join("\n"))
}

/// `exp(logit / t)` for `t > 0`; a one-hot argmax vector for `t = 0`.
pub fn temperature_scale(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be finite and nonnegative, got {t}"
        )));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("logits must be finite"));
    }
    if t == 0.0 {
        let mut out = vec![0.0; logits.len()];
        if !logits.is_empty() {
            out[util::argmax(logits)] = 1.0;
        }
        return Ok(out);
    }
    let scaled: Vec<f64> = logits.iter().map(|l| (l / t).exp()).collect();
    if scaled.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Ok(scaled);
    }
    // Overflow or total underflow: shift by the max, which leaves ratios intact.
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(logits.iter().map(|l| ((l - max) / t).exp()).collect())
}

/// Everything a backend may look at for one query.
#[derive(Debug)]
pub struct ClassifyRequest<'a> {
    pub query: &'a Fields,
    pub prompt_text: &'a str,
    pub demos: &'a [Demonstration],
    pub temperature: f64,
    pub template: &'a TaskTemplate,
    pub labels: &'a LabelSpace,
    /// The assembled text, as produced by [`assemble_input`].
    pub input: &'a str,
}

pub trait Backend: Send + Sync {
    /// Stable identifier, part of every cache key.
    fn id(&self) -> String;

    fn classify(
        &self,
        request: &ClassifyRequest<'_>,
    ) -> std::result::Result<ClassifierResponse, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn classify(
        &self,
        request: &ClassifyRequest<'_>,
    ) -> std::result::Result<ClassifierResponse, GatewayError> {
        (**self).classify(request)
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based): `base * 2^attempt`,
    /// scaled into `[0.5, 1.0)` of that when jitter is on.
    pub fn delay(&self, attempt: u32) -> Duration {
        let full = self.base_delay.saturating_mul(1u32 << attempt.min(16));
        if self.jitter && !full.is_zero() {
            full.mul_f64(rand::rng().random_range(0.5..1.0))
        } else {
            full
        }
    }
}

/// Token bucket shared by all callers of one gateway.
#[derive(Debug)]
pub struct RateLimiter {
    per_second: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_second: f64, capacity: f64) -> Result<Self> {
        if !(per_second > 0.0) || !(capacity >= 1.0) {
            return Err(Error::invalid("rate limit needs a positive rate and capacity >= 1"));
        }
        Ok(Self {
            per_second,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        })
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut guard = self.state.lock().expect("rate limiter poisoned");
                let (tokens, last) = &mut *guard;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.per_second)
                    .min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.per_second)
            };
            std::thread::sleep(wait);
        }
    }
}

/// Line of the persisted response cache.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key_hash: String,
    pub scores: Vec<f64>,
    pub raw_logprobs: Option<Vec<f64>>,
    pub timestamp: u64,
}

/// Backend plus cache, call budget, retries and rate limiting, bound to one
/// task template and label space.
pub struct Gateway {
    backend: Box<dyn Backend>,
    backend_id: String,
    template: TaskTemplate,
    labels: LabelSpace,
    cache: RwLock<HashMap<String, ClassifierResponse>>,
    cache_log: Option<Mutex<File>>,
    calls: AtomicU64,
    input_bytes: AtomicU64,
    budget: Option<u64>,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend_id)
            .field("calls", &self.calls())
            .field("budget", &self.budget)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static, template: TaskTemplate, labels: LabelSpace) -> Self {
        let backend_id = backend.id();
        Self {
            backend: Box::new(backend),
            backend_id,
            template,
            labels,
            cache: RwLock::new(HashMap::new()),
            cache_log: None,
            calls: AtomicU64::new(0),
            input_bytes: AtomicU64::new(0),
            budget: None,
            retry: RetryPolicy::default(),
            limiter: None,
        }
    }

    /// Hard cap on backend calls (retries included). Cache hits are free.
    pub fn with_budget(mut self, budget: Option<u64>) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, limiter: Option<RateLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    /// Loads previously persisted responses from `path` and appends new ones.
    pub fn with_cache_file(mut self, path: &Path) -> Result<Self> {
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut cache = self.cache.write().expect("cache poisoned");
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| {
                    Error::Dataset(format!("{}:{}: {e}", path.display(), lineno + 1))
                })?;
                cache.insert(
                    entry.key_hash,
                    ClassifierResponse {
                        scores: entry.scores,
                        raw_logprobs: entry.raw_logprobs,
                        missing_labels: Vec::new(),
                    },
                );
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        self.cache_log = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn template(&self) -> &TaskTemplate {
        &self.template
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    /// Backend calls issued so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Rough prompt-token count of the calls issued so far (4 bytes per token).
    pub fn estimated_tokens(&self) -> u64 {
        self.input_bytes.load(Ordering::SeqCst).div_ceil(4)
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn cached_responses(&self) -> usize {
        self.cache.read().expect("cache poisoned").len()
    }

    pub fn cache_key(&self, input: &str, temperature: f64) -> String {
        let mut bytes = Vec::with_capacity(input.len() + self.backend_id.len() + 10);
        bytes.extend_from_slice(self.backend_id.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(input.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&temperature.to_bits().to_le_bytes());
        util::sha256_hex(&bytes)
    }

    fn reserve_call(&self) -> std::result::Result<(), GatewayError> {
        match self.budget {
            None => {
                self.calls.fetch_add(1, Ordering::SeqCst);
                Ok(())
            }
            Some(limit) => self
                .calls
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |c| {
                    (c < limit).then_some(c + 1)
                })
                .map(|_| ())
                .map_err(|_| GatewayError::BudgetExceeded { limit }),
        }
    }

    /// Scores `query` under `prompt_text` and `demos` at temperature `t`.
    pub fn classify(
        &self,
        query: &Fields,
        prompt_text: &str,
        demos: &[Demonstration],
        temperature: f64,
    ) -> Result<ClassifierResponse> {
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(Error::invalid(format!(
                "temperature must be finite and nonnegative, got {temperature}"
            )));
        }
        let input = assemble_input(query, prompt_text, demos, &self.template, &self.labels)?;
        let key = self.cache_key(&input, temperature);
        if let Some(hit) = self.cache.read().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let request = ClassifyRequest {
            query,
            prompt_text,
            demos,
            temperature,
            template: &self.template,
            labels: &self.labels,
            input: &input,
        };
        let response = self.call_with_retry(&request)?;
        self.store(key, &response)?;
        Ok(response)
    }

    fn call_with_retry(&self, request: &ClassifyRequest<'_>) -> Result<ClassifierResponse> {
        let mut attempt = 0;
        loop {
            self.reserve_call()?;
            self.input_bytes
                .fetch_add(request.input.len() as u64, Ordering::SeqCst);
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match self.backend.classify(request) {
                Ok(resp) => {
                    resp.validate(self.labels.len())?;
                    return Ok(resp);
                }
                Err(err) if err.is_retryable() && attempt + 1 < self.retry.max_attempts => {
                    let delay = self.retry.delay(attempt);
                    log::warn!("backend call failed ({err}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(GatewayError::Transport { message, .. }) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt + 1,
                        message,
                    }
                    .into())
                }
                Err(err) => return Err(err.into()),
            }
        }
    }

    fn store(&self, key: String, response: &ClassifierResponse) -> Result<()> {
        if !response.missing_labels.is_empty() {
            log::debug!(
                "label words {:?} missing from backend output; floored at {MISSING_LABEL_FLOOR}",
                response.missing_labels
            );
        }
        if let Some(log) = &self.cache_log {
            let entry = CacheEntry {
                key_hash: key.clone(),
                scores: response.scores.clone(),
                raw_logprobs: response.raw_logprobs.clone(),
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            let mut line = serde_json::to_string(&entry)?;
            line.push('\n');
            let mut file = log.lock().expect("cache log poisoned");
            file.write_all(line.as_bytes())
                .map_err(|e| Error::io("response cache", e))?;
        }
        self.cache
            .write()
            .expect("cache poisoned")
            .insert(key, response.clone());
        Ok(())
    }
}
