//! Append-only label log. Replaying it front to back rebuilds the current
//! labels; the last record per finding wins.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use secretsift_core::ingest::load_corpus;
use secretsift_core::scan::Label;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub finding_id: String,
    pub label: Label,
    pub labeled_at: String,
    #[serde(default)]
    pub annotator: String,
}

impl LabelRecord {
    pub fn new(finding_id: &str, label: Label, annotator: &str) -> Result<Self> {
        let record = LabelRecord {
            finding_id: finding_id.to_string(),
            label,
            labeled_at: chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            annotator: annotator.to_string(),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        let hex = self.finding_id.len() == 64
            && self
                .finding_id
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if !hex {
            bail!("finding_id must be 64 lowercase hex characters");
        }
        if self.label == Label::Unlabeled {
            bail!("label must be secret or not_secret");
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct LabelStore {
    path: Option<PathBuf>,
    records: Vec<LabelRecord>,
    latest: HashMap<String, Label>,
}

impl LabelStore {
    /// In-memory store that never touches disk.
    pub fn ephemeral() -> Self {
        LabelStore::default()
    }

    /// Replays `path`; a missing file is an empty log.
    pub fn open(path: &Path) -> Result<Self> {
        let records: Vec<LabelRecord> = if path.exists() {
            load_corpus(path)?
        } else {
            Vec::new()
        };
        let mut store = LabelStore {
            path: Some(path.to_path_buf()),
            ..Default::default()
        };
        for r in records {
            r.validate()
                .with_context(|| format!("{}: record for {}", path.display(), r.finding_id))?;
            store.remember(r);
        }
        Ok(store)
    }

    fn remember(&mut self, record: LabelRecord) {
        self.latest.insert(record.finding_id.clone(), record.label);
        self.records.push(record);
    }

    pub fn append(&mut self, record: LabelRecord) -> Result<()> {
        record.validate()?;
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            let line = serde_json::to_string(&record)? + "\n";
            file.write_all(line.as_bytes())
                .and_then(|_| file.sync_data())
                .with_context(|| format!("appending to {}", path.display()))?;
        }
        self.remember(record);
        Ok(())
    }

    pub fn get(&self, finding_id: &str) -> Option<Label> {
        self.latest.get(finding_id).copied()
    }

    pub fn records(&self) -> &[LabelRecord] {
        &self.records
    }

    pub fn latest(&self) -> &HashMap<String, Label> {
        &self.latest
    }

    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }
}
