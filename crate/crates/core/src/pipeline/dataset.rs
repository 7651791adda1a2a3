use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::gateway::{Fields, LabelSpace, TaskTemplate};
use crate::util;

/// Optional column holding an explicit example id.
pub const ID_FIELD: &str = "id";
/// Optional column holding a gold label, used for evaluation only.
pub const GOLD_FIELD: &str = "label";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: u64,
    pub fields: Fields,
}

impl Example {
    /// Hash of the template fields, stable across runs.
    pub fn text_hash(&self) -> String {
        let canonical = serde_json::to_string(&self.fields).expect("fields serialize");
        util::sha256_hex(canonical.as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub template: TaskTemplate,
    pub labels: LabelSpace,
    pub examples: Vec<Example>,
    /// Gold labels, kept apart from everything the method itself reads.
    pub gold: Vec<Option<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.examples.iter().map(|e| e.id).collect()
    }

    pub fn fields(&self) -> Vec<Fields> {
        self.examples.iter().map(|e| e.fields.clone()).collect()
    }

    /// Field values joined with spaces; the text that gets embedded and
    /// mined for vocabulary.
    pub fn texts(&self) -> Vec<String> {
        self.examples
            .iter()
            .map(|e| e.fields.values().cloned().collect::<Vec<_>>().join(" "))
            .collect()
    }

    pub fn has_gold(&self) -> bool {
        self.gold.iter().any(Option::is_some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Jsonl,
    Tsv,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) => ext.parse(),
            None => Err(Error::Dataset(format!(
                "{}: cannot infer the format without an extension",
                path.display()
            ))),
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(DataFormat::Jsonl),
            "tsv" => Ok(DataFormat::Tsv),
            other => Err(Error::Dataset(format!("unsupported data format {other:?}"))),
        }
    }
}

pub fn load_dataset(
    path: &Path,
    format: Option<DataFormat>,
    template: TaskTemplate,
    labels: LabelSpace,
) -> Result<Dataset> {
    let format = match format {
        Some(f) => f,
        None => DataFormat::from_path(path)?,
    };
    let text = util::read_to_string(path)?;
    parse_dataset(&text, format, template, labels)
        .map_err(|e| match e {
            Error::Dataset(msg) => Error::Dataset(format!("{}: {msg}", path.display())),
            other => other,
        })
}

pub fn parse_dataset(
    text: &str,
    format: DataFormat,
    template: TaskTemplate,
    labels: LabelSpace,
) -> Result<Dataset> {
    let rows = match format {
        DataFormat::Jsonl => jsonl_rows(text)?,
        DataFormat::Tsv => tsv_rows(text)?,
    };
    if rows.is_empty() {
        return Err(Error::Dataset("no examples found".into()));
    }
    let mut builder = Builder {
        template: &template,
        labels: &labels,
        seen: HashSet::new(),
        examples: Vec::with_capacity(rows.len()),
        gold: Vec::with_capacity(rows.len()),
    };
    for (index, (line, row)) in rows.into_iter().enumerate() {
        builder.push(index, line, row)?;
    }
    let Builder { examples, gold, .. } = builder;
    Ok(Dataset {
        template,
        labels,
        examples,
        gold,
    })
}

/// A row as (column, value) pairs; `None` marks a null or empty cell.
type Row = Vec<(String, Option<String>)>;

fn jsonl_rows(text: &str) -> Result<Vec<(usize, Row)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| Error::Dataset(format!("line {line_no}: invalid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(Error::Dataset(format!("line {line_no}: expected a JSON object")));
        };
        let row = map
            .into_iter()
            .map(|(k, v)| {
                let cell = match v {
                    Value::Null => None,
                    Value::String(s) => Some(s),
                    Value::Number(n) => Some(n.to_string()),
                    Value::Bool(b) => Some(b.to_string()),
                    other => Some(other.to_string()),
                };
                (k, cell)
            })
            .collect();
        rows.push((line_no, row));
    }
    Ok(rows)
}

fn tsv_rows(text: &str) -> Result<Vec<(usize, Row)>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Dataset(format!("line 1: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Dataset(format!("line {line}: {e}"))
        })?;
        let line_no = record.position().map_or(0, |p| p.line() as usize);
        let row = header
            .iter()
            .zip(record.iter())
            .map(|(h, v)| (h.clone(), (!v.is_empty()).then(|| v.to_string())))
            .collect();
        rows.push((line_no, row));
    }
    Ok(rows)
}

struct Builder<'a> {
    template: &'a TaskTemplate,
    labels: &'a LabelSpace,
    seen: HashSet<u64>,
    examples: Vec<Example>,
    gold: Vec<Option<usize>>,
}

impl Builder<'_> {
    fn push(&mut self, index: usize, line: usize, row: Row) -> Result<()> {
        let err = |msg: String| Error::Dataset(format!("line {line}: {msg}"));
        let cell = |name: &str| -> Option<&str> {
            row.iter()
                .find(|(k, _)| k == name)
                .and_then(|(_, v)| v.as_deref())
        };

        let id = match cell(ID_FIELD) {
            Some(raw) => raw
                .trim()
                .parse::<u64>()
                .map_err(|_| err(format!("id {raw:?} is not a nonnegative integer")))?,
            None => index as u64,
        };
        if !self.seen.insert(id) {
            return Err(err(format!("duplicate example id {id}")));
        }

        let mut fields = Fields::new();
        for name in self.template.field_names() {
            let value = cell(name).ok_or_else(|| err(format!("missing field {{{name}}}")))?;
            fields.insert(name.clone(), value.to_string());
        }

        let gold = match cell(GOLD_FIELD) {
            None => None,
            Some(raw) => Some(self.gold_label(raw).ok_or_else(|| {
                err(format!(
                    "label {raw:?} is neither a label word ({}) nor a class index",
                    self.labels.options_text()
                ))
            })?),
        };
        self.examples.push(Example { id, fields });
        self.gold.push(gold);
        Ok(())
    }

    fn gold_label(&self, raw: &str) -> Option<usize> {
        let raw = raw.trim();
        self.labels.index_of(raw).or_else(|| {
            raw.parse::<usize>()
                .ok()
                .filter(|&c| c < self.labels.len())
        })
    }
}
