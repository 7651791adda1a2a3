use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceConfig;
use crate::error::{Error, Result};
use crate::gateway::http::HttpConfig;
use crate::gateway::simulated::SimConfig;
use crate::gateway::{builtin_labels, LabelSpace, TaskTemplate};
use crate::optimizer::{PredictMode, TrainerConfig};
use crate::util;
use crate::vocab::VocabParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Sim,
    Http,
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(BackendKind::Sim),
            "http" => Ok(BackendKind::Http),
            other => Err(Error::Config(format!("unknown backend {other:?} (sim|http)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// Hashed TF-IDF computed in process.
    #[default]
    Local,
    /// The `/embeddings` endpoint of the HTTP backend.
    Remote,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptChoice {
    /// Draw one prompt from the policy with the run seed.
    #[default]
    Sampled,
    /// Most likely token at every position.
    Mode,
}

impl FromStr for PromptChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(PromptChoice::Sampled),
            "mode" => Ok(PromptChoice::Mode),
            other => Err(Error::Config(format!(
                "unknown prompt choice {other:?} (sampled|mode)"
            ))),
        }
    }
}

/// One document describing a whole run. Relative paths are resolved
/// against the directory of the file the config was loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    /// Custom template body; the built-in template for `task` otherwise.
    pub template_file: Option<PathBuf>,
    /// Custom label words; the built-in ones for `task` otherwise.
    pub labels: Option<Vec<String>>,
    pub data: PathBuf,
    /// `jsonl` or `tsv`; inferred from the data file extension when absent.
    pub format: Option<String>,
    /// Not part of the config hash.
    pub output_dir: PathBuf,
    pub backend: BackendKind,
    pub sim: SimConfig,
    pub http: HttpConfig,
    pub embedding: EmbeddingKind,
    pub embedding_dim: Option<usize>,
    pub confidence: ConfidenceConfig,
    pub trainer: TrainerConfig,
    pub vocab: VocabParams,
    pub predict: PromptChoice,
    /// Hard cap on backend calls per command.
    pub budget: Option<u64>,
    /// Backend calls per second.
    pub rate_limit: Option<f64>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: "sst2".into(),
            template_file: None,
            labels: None,
            data: PathBuf::from("data.jsonl"),
            format: None,
            output_dir: PathBuf::from("out"),
            backend: BackendKind::Sim,
            sim: SimConfig::default(),
            http: HttpConfig::default(),
            embedding: EmbeddingKind::Local,
            embedding_dim: None,
            confidence: ConfidenceConfig::default(),
            trainer: TrainerConfig::default(),
            vocab: VocabParams::default(),
            predict: PromptChoice::Sampled,
            budget: None,
            rate_limit: None,
            base_dir: PathBuf::new(),
        }
    }
}

impl RunConfig {
    /// Reads TOML or JSON, chosen by extension (`.json` is JSON, anything
    /// else TOML).
    pub fn load(path: &Path) -> Result<Self> {
        let text = util::read_to_string(path)?;
        let is_json = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut config = if is_json {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        config.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// sha256 over the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut bare = self.clone();
        bare.output_dir = PathBuf::new();
        let json = serde_json::to_string(&bare).expect("run config serializes");
        util::sha256_hex(json.as_bytes())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn data_path(&self) -> PathBuf {
        self.resolve(&self.data)
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn template(&self) -> Result<TaskTemplate> {
        match &self.template_file {
            Some(p) => TaskTemplate::new(self.task.clone(), util::read_to_string(&self.resolve(p))?),
            None => TaskTemplate::builtin(&self.task),
        }
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        match &self.labels {
            Some(words) => LabelSpace::new(words.iter().cloned()),
            None => builtin_labels(&self.task),
        }
    }

    pub fn predict_mode(&self) -> PredictMode {
        match self.predict {
            PromptChoice::Sampled => PredictMode::Sampled {
                seed: self.trainer.seed,
            },
            PromptChoice::Mode => PredictMode::Mode,
        }
    }

    /// Checks every setting that can be checked without touching a backend.
    pub fn validate(&self) -> Result<()> {
        self.confidence.validate()?;
        self.trainer.validate()?;
        if self.vocab.n_max == 0 {
            return Err(Error::Config("vocabulary size N_max must be positive".into()));
        }
        if let Some(rate) = self.rate_limit {
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(Error::Config("rate limit must be positive".into()));
            }
        }
        if self.embedding_dim == Some(0) {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if let Some(f) = &self.format {
            f.parse::<super::DataFormat>()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        self.template().map_err(config_error)?;
        let labels = self.label_space().map_err(config_error)?;
        if labels.len() < 2 {
            return Err(Error::Config("at least two label words are required".into()));
        }
        Ok(())
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::Io { .. } | Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
#[allow(clippy::field_reassign_with_default)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_overrides_nested_sections() {
        let cfg = RunConfig::from_toml(
            r#"
            task = "mnli"
            data = "mnli.tsv"
            backend = "sim"
            budget = 1000

            [confidence]
            gamma = 0.8

            [trainer]
            iterations = 3
            loss = "hinge"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.task, "mnli");
        assert_eq!(cfg.budget, Some(1000));
        assert_eq!(cfg.confidence.gamma, 0.8);
        assert_eq!(cfg.confidence.temperatures, vec![0.5, 1.0, 1.5]);
        assert_eq!(cfg.trainer.iterations, 3);
        assert_eq!(cfg.trainer.samples, 4);
        assert_eq!(cfg.label_space().unwrap().len(), 3);
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.sim = crate::synthetic::sim_config(&crate::synthetic::SynthParams::default());
        cfg.budget = Some(5);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("gama = 0.7\n").is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.trainer.seed = 1;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.labels = Some(vec!["good".into(), "bad".into()]);
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_settings_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.trainer.samples = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.task = "nope".into();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.confidence.gamma = 1.5;
        assert!(cfg.validate().is_err());
    }
}
