use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ShiftConfig, ShiftError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub source: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub test_per_cell: usize,
}

/// Source (train + val) quota of one full combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellQuota {
    pub target: usize,
    pub achieved: usize,
}

/// Deterministic train/val/test instance lists for one shift config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub config: ShiftConfig,
    pub counts: SplitCounts,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Keyed by combination (`square|red|orange|small`), canonical order.
    pub cell_quotas: IndexMap<String, CellQuota>,
    pub checksum: String,
}

#[derive(Serialize)]
struct ManifestBody<'a> {
    config: &'a ShiftConfig,
    counts: &'a SplitCounts,
    train_ids: &'a [String],
    val_ids: &'a [String],
    test_ids: &'a [String],
    cell_quotas: &'a IndexMap<String, CellQuota>,
}

impl SplitManifest {
    /// Hex SHA-256 of the compact JSON serialization without the checksum field.
    pub fn compute_checksum(&self) -> String {
        let body = ManifestBody {
            config: &self.config,
            counts: &self.counts,
            train_ids: &self.train_ids,
            val_ids: &self.val_ids,
            test_ids: &self.test_ids,
            cell_quotas: &self.cell_quotas,
        };
        let bytes = serde_json::to_vec(&body).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn seal(&mut self) {
        self.checksum = self.compute_checksum();
    }

    pub fn checksum_valid(&self) -> bool {
        self.checksum == self.compute_checksum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, ShiftError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ShiftError> {
        File::create(path)?.write_all(self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ShiftError> {
        let mut s = String::new();
        File::open(path)?.read_to_string(&mut s)?;
        Self::from_json(&s)
    }

    /// File name derived from the config id.
    pub fn file_name(&self) -> String {
        format!("{}.json", self.config.config_id.replace('/', "__"))
    }

    pub fn source_ids(&self) -> impl Iterator<Item = &String> {
        self.train_ids.iter().chain(&self.val_ids)
    }
}
