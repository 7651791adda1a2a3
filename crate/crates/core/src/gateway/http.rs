//! OpenAI-compatible chat-completions backend.
//!
//! One request per query: the assembled input as a single user message with
//! `logprobs` enabled. Label scores come from the top log-probabilities of
//! the first answer token, matched to each label word by its first distinct
//! prefix, then temperature-scaled locally.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{temperature_scale, Backend, ClassifierResponse, ClassifyRequest, LabelSpace};
use super::MISSING_LABEL_FLOOR;
use crate::error::GatewayError;

pub const DEFAULT_API_KEY_ENV: &str = "PPD_API_KEY";
pub const DEFAULT_BASE_URL_ENV: &str = "PPD_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const TOP_LOGPROBS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: Option<String>,
    pub model: String,
    pub api_key_env: String,
    /// Completion length, clamped to `1..=4`.
    pub max_tokens: u32,
    pub timeout_secs: u64,
    /// Model used by the remote embedding provider.
    pub embedding_model: String,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            model: "gpt-4o-mini".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            max_tokens: 1,
            timeout_secs: 60,
            embedding_model: "text-embedding-3-small".into(),
        }
    }
}

impl HttpConfig {
    /// Base URL from the config, else `PPD_BASE_URL`, else the public endpoint.
    pub fn resolved_base_url(&self) -> String {
        self.base_url
            .clone()
            .or_else(|| std::env::var(DEFAULT_BASE_URL_ENV).ok())
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_string())
            .trim_end_matches('/')
            .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body. Field order is the wire order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub logprobs: bool,
    pub top_logprobs: u32,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(model: &str, input: &str, max_tokens: u32, temperature: f64) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: input.to_string(),
            }],
            max_tokens: max_tokens.clamp(1, 4),
            logprobs: true,
            top_logprobs: TOP_LOGPROBS,
            temperature,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("chat request serializes")
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<Choice>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Choice {
    #[serde(default)]
    pub logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChoiceLogprobs {
    #[serde(default)]
    pub content: Vec<TokenLogprob>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Vec<TopLogprob>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

/// Per-label log-probabilities from the first answer token's alternatives,
/// plus the classes that had to be floored.
pub fn label_logprobs(top: &[TopLogprob], labels: &LabelSpace) -> (Vec<f64>, Vec<usize>) {
    let lowered: Vec<String> = labels.words().iter().map(|w| w.to_lowercase()).collect();
    let mut best = vec![f64::NEG_INFINITY; labels.len()];
    for alt in top {
        let tok = alt.token.trim().to_lowercase();
        if tok.is_empty() {
            continue;
        }
        let claimants: Vec<usize> = lowered
            .iter()
            .enumerate()
            .filter(|(_, w)| w.starts_with(&tok))
            .map(|(i, _)| i)
            .collect();
        let target = match claimants.as_slice() {
            [only] => Some(*only),
            _ => lowered.iter().position(|w| *w == tok),
        };
        if let Some(c) = target {
            best[c] = best[c].max(alt.logprob);
        }
    }
    let mut missing = Vec::new();
    for (c, lp) in best.iter_mut().enumerate() {
        if !lp.is_finite() {
            *lp = MISSING_LABEL_FLOOR.ln();
            missing.push(c);
        }
    }
    (best, missing)
}

pub fn parse_response(
    body: &str,
    labels: &LabelSpace,
    temperature: f64,
) -> Result<ClassifierResponse, GatewayError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    let first = parsed
        .choices
        .first()
        .and_then(|c| c.logprobs.as_ref())
        .and_then(|l| l.content.first())
        .ok_or_else(|| GatewayError::Protocol("response carries no token logprobs".into()))?;
    let mut alternatives = first.top_logprobs.clone();
    alternatives.push(TopLogprob {
        token: first.token.clone(),
        logprob: first.logprob,
    });
    let (raw, missing) = label_logprobs(&alternatives, labels);
    let scores = temperature_scale(&raw, temperature)
        .map_err(|e| GatewayError::Protocol(e.to_string()))?;
    Ok(ClassifierResponse {
        scores,
        raw_logprobs: Some(raw),
        missing_labels: missing,
    })
}

/// Minimal POST-JSON transport so tests can stand in for the network.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, api_key: &str, body: &str) -> Result<String, GatewayError>;
}

#[derive(Debug, Clone)]
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, api_key: &str, body: &str) -> Result<String, GatewayError> {
        let transport = |message: String| GatewayError::Transport {
            attempts: 1,
            message,
        };
        let mut resp = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {api_key}"))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| transport(e.to_string()))?;
        match status {
            200..=299 => Ok(text),
            408 | 429 | 500..=599 => Err(transport(format!("HTTP {status}: {text}"))),
            _ => Err(GatewayError::Protocol(format!("HTTP {status}: {text}"))),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    base_url: String,
    api_key: String,
    transport: Box<dyn Transport>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.base_url)
            .field("model", &self.config.model)
            .finish()
    }
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: HttpConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| GatewayError::MissingApiKey(config.api_key_env.clone()))?;
        let transport = UreqTransport::new(Duration::from_secs(config.timeout_secs));
        Ok(Self::with_transport(config, api_key, transport))
    }

    pub fn with_transport(
        config: HttpConfig,
        api_key: impl Into<String>,
        transport: impl Transport + 'static,
    ) -> Self {
        Self {
            base_url: config.resolved_base_url(),
            config,
            api_key: api_key.into(),
            transport: Box::new(transport),
        }
    }

    pub fn request_body(&self, input: &str, temperature: f64) -> String {
        ChatRequest::new(&self.config.model, input, self.config.max_tokens, temperature).to_json()
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}:{}", self.base_url, self.config.model)
    }

    fn classify(&self, request: &ClassifyRequest<'_>) -> Result<ClassifierResponse, GatewayError> {
        let body = self.request_body(request.input, request.temperature);
        let url = format!("{}/chat/completions", self.base_url);
        let text = self.transport.post_json(&url, &self.api_key, &body)?;
        parse_response(&text, request.labels, request.temperature)
    }
}

#[derive(Debug, Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Calls `{base_url}/embeddings` for one text.
pub fn fetch_embedding(
    transport: &dyn Transport,
    config: &HttpConfig,
    api_key: &str,
    text: &str,
) -> Result<Vec<f64>, GatewayError> {
    let body = serde_json::to_string(&EmbeddingRequest {
        model: &config.embedding_model,
        input: text,
    })
    .map_err(|e| GatewayError::Protocol(e.to_string()))?;
    let url = format!("{}/embeddings", config.resolved_base_url());
    let text = transport.post_json(&url, api_key, &body)?;
    let parsed: EmbeddingResponse =
        serde_json::from_str(&text).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    parsed
        .data
        .into_iter()
        .next()
        .map(|d| d.embedding)
        .ok_or_else(|| GatewayError::Protocol("embedding response has no data".into()))
}
