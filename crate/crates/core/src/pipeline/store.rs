use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::confidence::PseudoLabelRecord;
use crate::error::{Error, Result};
use crate::gateway::http::ChatMessage;
use crate::util;

use super::Dataset;

/// One line of the pseudo-label store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    #[serde(flatten)]
    pub record: PseudoLabelRecord,
    pub config_hash: String,
}

pub fn write_store(path: &Path, records: &[PseudoLabelRecord], config_hash: &str) -> Result<()> {
    let mut out = String::new();
    for record in records {
        let line = StoreRecord {
            record: record.clone(),
            config_hash: config_hash.to_string(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    util::write_atomic(path, out.as_bytes())
}

pub fn read_store(path: &Path) -> Result<Vec<StoreRecord>> {
    let text = util::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Mismatch(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Store records reordered to match the dataset, one per example.
pub fn align_store(dataset: &Dataset, store: Vec<StoreRecord>) -> Result<Vec<PseudoLabelRecord>> {
    if store.len() != dataset.len() {
        return Err(Error::Mismatch(format!(
            "store has {} records but the dataset has {} examples",
            store.len(),
            dataset.len()
        )));
    }
    let mut by_id: HashMap<u64, PseudoLabelRecord> = store
        .into_iter()
        .map(|s| (s.record.example_id, s.record))
        .collect();
    dataset
        .examples
        .iter()
        .map(|ex| {
            let rec = by_id.remove(&ex.id).ok_or_else(|| {
                Error::Mismatch(format!("store has no record for example {}", ex.id))
            })?;
            if rec.text_hash != ex.text_hash() {
                return Err(Error::Mismatch(format!(
                    "example {} changed since it was scored",
                    ex.id
                )));
            }
            Ok(rec)
        })
        .collect()
}

/// Distinct config hashes found in a store.
pub fn store_hashes(store: &[StoreRecord]) -> Vec<String> {
    let mut hashes: Vec<String> = store.iter().map(|s| s.config_hash.clone()).collect();
    hashes.sort();
    hashes.dedup();
    hashes
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExportOptions {
    pub reliable_only: bool,
    /// Fail instead of skipping examples that have no learned label.
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportStats {
    pub exported: usize,
    pub skipped_unlabeled: usize,
    pub filtered_unreliable: usize,
}

#[derive(Serialize)]
struct FinetuneLine<'a> {
    messages: [&'a ChatMessage; 2],
}

/// Chat-format fine-tuning lines: the templated query as the user turn and
/// the learned label word as the assistant turn.
pub fn export_finetune(
    dataset: &Dataset,
    records: &[PseudoLabelRecord],
    options: ExportOptions,
) -> Result<(String, ExportStats)> {
    if records.len() != dataset.len() {
        return Err(Error::Mismatch("records and dataset differ in length".into()));
    }
    let mut stats = ExportStats::default();
    let mut out = String::new();
    for (ex, rec) in dataset.examples.iter().zip(records) {
        if options.reliable_only && !rec.reliable {
            stats.filtered_unreliable += 1;
            continue;
        }
        let Some(label) = rec.learned_label else {
            if options.strict {
                return Err(Error::Incomplete(format!(
                    "example {} has no learned label; run predict first",
                    ex.id
                )));
            }
            stats.skipped_unlabeled += 1;
            continue;
        };
        let word = dataset.labels.word(label).ok_or_else(|| {
            Error::Mismatch(format!("learned label {label} of example {} is out of range", ex.id))
        })?;
        let user = ChatMessage {
            role: "user".into(),
            content: dataset.template.render(&ex.fields, &dataset.labels)?,
        };
        let assistant = ChatMessage {
            role: "assistant".into(),
            content: word.to_string(),
        };
        out.push_str(&serde_json::to_string(&FinetuneLine {
            messages: [&user, &assistant],
        })?);
        out.push('\n');
        stats.exported += 1;
    }
    if stats.skipped_unlabeled > 0 {
        log::warn!(
            "skipped {} examples without a learned label",
            stats.skipped_unlabeled
        );
    }
    if options.strict && stats.exported == 0 {
        return Err(Error::Incomplete("no labeled examples to export".into()));
    }
    Ok((out, stats))
}
