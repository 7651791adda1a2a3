//! Dataset loading, run configuration and the score / train / predict /
//! export phases.

mod config;
mod dataset;
mod run;
mod store;

pub use config::{BackendKind, EmbeddingKind, PromptChoice, RunConfig};
pub use dataset::{load_dataset, parse_dataset, DataFormat, Dataset, Example, GOLD_FIELD, ID_FIELD};
pub use run::*;
pub use store::{
    align_store, export_finetune, read_store, store_hashes, write_store, ExportOptions, ExportStats,
    StoreRecord,
};
