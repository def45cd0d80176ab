//! Shared data model: binary response matrices, ecosystem metadata and
//! bootstrap item subsets, plus the CSV ingest and export paths.

mod metadata;
mod responses;
mod subset;

pub use metadata::{
    ingest_metadata, write_metadata, EcosystemMetadata, FacetComposition, ModelMeta, ScoreRow, DEPLOYMENT_FLAGS,
};
pub use responses::{ingest_responses, write_responses, Layout, ResponseMatrix, MISSING};
pub use subset::{sample_item_subset, ItemSubset};

use serde::Serialize;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: response `{value}` is not 0, 1 or empty")]
    InvalidResponse { row: usize, column: String, value: String },
    #[error("duplicate response for model `{model}`, item `{bench}__{item}`")]
    DuplicatePair { model: String, bench: String, item: String },
    #[error("row {row}, column `{column}`: `{value}` is not numeric")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("benchmark `{bench}` has {available} items, {requested} requested")]
    SubsetTooLarge { bench: String, requested: usize, available: usize },
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), source }
    }
}

/// Summary written beside every ingested file.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Manifest {
    pub source: String,
    pub kind: String,
    pub input_rows: usize,
    pub retained_rows: usize,
    pub dropped_rows: usize,
    pub columns: usize,
    pub models: usize,
    pub items: usize,
    pub benches: usize,
    pub zero_variance_items: Vec<String>,
    pub seed: Option<u64>,
    pub draw_algorithm: Option<String>,
}

impl Manifest {
    /// Writes `<file>.manifest.json` next to `data_path`.
    pub fn write_beside(&self, data_path: &Path) -> Result<std::path::PathBuf, DataError> {
        let mut name = data_path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        let out = data_path.with_file_name(name);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&out, text + "\n").map_err(|e| DataError::io(&out, e))?;
        Ok(out)
    }
}

pub(crate) fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers.iter().position(|h| h.trim() == name).ok_or_else(|| DataError::MissingColumn(name.to_string()))
}
