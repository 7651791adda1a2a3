//! Task templates and label spaces.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Field values of one example, keyed by template placeholder.
pub type Fields = BTreeMap<String, String>;

pub const OPTIONS_PLACEHOLDER: &str = "options";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    label_words: Vec<String>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let label_words: Vec<String> = words.into_iter().map(Into::into).collect();
        if label_words.len() < 2 {
            return Err(Error::invalid("a label space needs at least two label words"));
        }
        let mut seen = HashSet::new();
        for w in &label_words {
            if w.trim().is_empty() {
                return Err(Error::invalid("label words must be nonempty"));
            }
            if !seen.insert(w.to_lowercase()) {
                return Err(Error::invalid(format!(
                    "label word {w:?} is not case-insensitively distinct"
                )));
            }
        }
        Ok(Self { label_words })
    }

    pub fn len(&self) -> usize {
        self.label_words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label_words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.label_words
    }

    pub fn word(&self, class: usize) -> Option<&str> {
        self.label_words.get(class).map(String::as_str)
    }

    /// Case-insensitive lookup of a label word.
    pub fn index_of(&self, word: &str) -> Option<usize> {
        let w = word.trim().to_lowercase();
        self.label_words.iter().position(|l| l.to_lowercase() == w)
    }

    pub fn options_text(&self) -> String {
        self.label_words.join(", ")
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        LabelSpace::new(words)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(l: LabelSpace) -> Self {
        l.label_words
    }
}

/// A manual template such as `Review: {sentence}, Options: {options}. Answer:`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate", into = "RawTemplate")]
pub struct TaskTemplate {
    name: String,
    body: String,
    field_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawTemplate {
    name: String,
    body: String,
}

impl TryFrom<RawTemplate> for TaskTemplate {
    type Error = Error;

    fn try_from(raw: RawTemplate) -> Result<Self> {
        TaskTemplate::new(raw.name, raw.body)
    }
}

impl From<TaskTemplate> for RawTemplate {
    fn from(t: TaskTemplate) -> Self {
        RawTemplate {
            name: t.name,
            body: t.body,
        }
    }
}

impl TaskTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self> {
        let body = body.into().trim().to_string();
        if !body.contains("{options}") {
            return Err(Error::invalid("template body must contain {options}"));
        }
        if !body.ends_with("Answer:") {
            return Err(Error::invalid("template body must end with \"Answer:\""));
        }
        let field_names = placeholders(&body)?
            .into_iter()
            .filter(|p| p != OPTIONS_PLACEHOLDER)
            .collect();
        Ok(Self {
            name: name.into(),
            body,
            field_names,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Placeholders an example must supply, in order of first appearance.
    pub fn field_names(&self) -> &[String] {
        &self.field_names
    }

    /// Fills every placeholder. The result ends with the open `Answer:`.
    pub fn render(&self, fields: &Fields, labels: &LabelSpace) -> Result<String> {
        let mut out = self.body.clone();
        for name in &self.field_names {
            let value = fields.get(name).ok_or_else(|| {
                Error::invalid(format!(
                    "template {:?} requires field {name:?}",
                    self.name
                ))
            })?;
            out = out.replace(&format!("{{{name}}}"), value);
        }
        Ok(out.replace("{options}", &labels.options_text()))
    }

    /// Built-in template by task id (`sst2`, `cola`, `mnli`, `qqp`, `mrpc`,
    /// `rte`, `wnli`, `mmlu`).
    pub fn builtin(task: &str) -> Result<Self> {
        let (name, body) = match normalize_task(task).as_str() {
            "sst2" => ("sst2", "Review: {sentence}, Options: {options}. Answer:"),
            "cola" => ("cola", "Sentence: {sentence} Options: {options}. Answer:"),
            "mnli" => (
                "mnli",
                "Premise: {premise}\nHypothesis: {hypothesis}\nOptions: {options}. Answer:",
            ),
            "qqp" => (
                "qqp",
                "Question 1: {question1}\nQuestion 2: {question2}\nOptions: {options}. Answer:",
            ),
            "mrpc" => (
                "mrpc",
                "Sentence 1: {sentence1}\nSentence 2: {sentence2}\nOptions: {options}. Answer:",
            ),
            "rte" => (
                "rte",
                "Premise: {sentence1}\nHypothesis: {sentence2}\nOptions: {options}. Answer:",
            ),
            "wnli" => (
                "wnli",
                "Sentence 1: {sentence1}\nSentence 2: {sentence2}\nOptions: {options}. Answer:",
            ),
            "mmlu" | "cais" => ("mmlu", "Question: {question}, Options: {options}. Answer:"),
            other => return Err(Error::invalid(format!("unknown task {other:?}"))),
        };
        TaskTemplate::new(name, body)
    }
}

/// Default label words per built-in task.
pub fn builtin_labels(task: &str) -> Result<LabelSpace> {
    match normalize_task(task).as_str() {
        "sst2" => LabelSpace::new(["positive", "negative"]),
        "cola" => LabelSpace::new(["acceptable", "unacceptable"]),
        "mnli" => LabelSpace::new(["entailment", "neutral", "contradiction"]),
        "qqp" | "mrpc" | "rte" | "wnli" => LabelSpace::new(["yes", "no"]),
        "mmlu" | "cais" => LabelSpace::new(["A", "B", "C", "D"]),
        other => Err(Error::invalid(format!("unknown task {other:?}"))),
    }
}

pub const BUILTIN_TASKS: [&str; 8] = ["sst2", "cola", "mnli", "qqp", "mrpc", "rte", "wnli", "mmlu"];

fn normalize_task(task: &str) -> String {
    task.to_lowercase().replace(['-', '_'], "")
}

fn placeholders(body: &str) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = body;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        let end = after
            .find('}')
            .ok_or_else(|| Error::invalid("unterminated placeholder in template"))?;
        let name = &after[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(Error::invalid(format!("invalid placeholder {{{name}}}")));
        }
        if !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
        rest = &after[end + 1..];
    }
    Ok(out)
}
