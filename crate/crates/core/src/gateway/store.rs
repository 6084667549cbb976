//! Gateway-local reading store: append-only, one JSON object per line.

use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{ForwardDecision, Reading};
use crate::canonical::to_canonical_line;
use crate::ids::RecordId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEntry {
    pub reading: Reading,
    pub decision: ForwardDecision,
    pub config_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<RecordId>,
}

#[derive(Debug, Default)]
pub struct LocalStore {
    entries: Vec<LocalEntry>,
    path: Option<PathBuf>,
}

impl LocalStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens or creates a file-backed store, loading existing lines.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = Vec::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                entries.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
            }
        }
        Ok(Self { entries, path: Some(path) })
    }

    pub fn append(&mut self, entry: LocalEntry) -> io::Result<()> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let line = to_canonical_line(&entry).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            writeln!(f, "{line}")?;
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[LocalEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
