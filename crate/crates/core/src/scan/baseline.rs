//! Baseline file: the serialized result of a scan.
//!
//! The writer is hand-rolled so that the byte layout is fixed: keys sorted,
//! real numbers printed with exactly four decimal places.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{sha256_hex, Detector, Finding, Label, ScanError};

pub const BASELINE_VERSION: &str = "1.0";

/// Deterministic scan result for a tree or corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub version: String,
    pub generated_at: String,
    pub detectors: Vec<Detector>,
    results: BTreeMap<String, Vec<Finding>>,
}

pub(crate) fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

pub(crate) fn utc_now() -> String {
    chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

impl Baseline {
    /// Builds a baseline stamped with the current time. Findings are grouped
    /// by path, sorted, deduplicated, and their real-valued fields rounded to
    /// the four decimals the file format keeps.
    pub fn new(detectors: impl IntoIterator<Item = Detector>, findings: impl IntoIterator<Item = Finding>) -> Self {
        Self::with_timestamp(detectors, findings, utc_now())
    }

    pub fn with_timestamp(
        detectors: impl IntoIterator<Item = Detector>,
        findings: impl IntoIterator<Item = Finding>,
        generated_at: String,
    ) -> Self {
        let detectors: BTreeSet<Detector> = detectors.into_iter().collect();
        let mut results: BTreeMap<String, Vec<Finding>> = BTreeMap::new();
        for mut f in findings {
            f.entropy_bits = round4(f.entropy_bits);
            f.score = f.score.map(round4);
            results.entry(f.path.clone()).or_default().push(f);
        }
        for list in results.values_mut() {
            list.sort_by(|a, b| {
                (a.line_number, a.detector, &a.candidate_hash).cmp(&(
                    b.line_number,
                    b.detector,
                    &b.candidate_hash,
                ))
            });
            list.dedup_by(|a, b| a.key() == b.key());
        }
        Baseline {
            version: BASELINE_VERSION.to_string(),
            generated_at,
            detectors: detectors.into_iter().collect(),
            results,
        }
    }

    pub fn results(&self) -> &BTreeMap<String, Vec<Finding>> {
        &self.results
    }

    /// Findings in file order.
    pub fn findings(&self) -> impl Iterator<Item = &Finding> {
        self.results.values().flatten()
    }

    pub fn findings_mut(&mut self) -> impl Iterator<Item = &mut Finding> {
        self.results.values_mut().flatten()
    }

    pub fn len(&self) -> usize {
        self.results.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn find(&self, finding_id: &str) -> Option<&Finding> {
        self.findings().find(|f| f.id() == finding_id)
    }

    /// Serializes the baseline. With `plaintext` the raw candidates are
    /// included (the sidecar form); findings whose candidate is unknown are
    /// written without one either way.
    pub fn to_json(&self, plaintext: bool) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        let _ = writeln!(
            out,
            "  \"detectors\": [{}],",
            self.detectors
                .iter()
                .map(|d| json_str(d.as_str()))
                .collect::<Vec<_>>()
                .join(", ")
        );
        let _ = writeln!(out, "  \"generated_at\": {},", json_str(&self.generated_at));
        if self.results.is_empty() {
            out.push_str("  \"results\": {},\n");
        } else {
            out.push_str("  \"results\": {\n");
            let n_paths = self.results.len();
            for (pi, (path, findings)) in self.results.iter().enumerate() {
                let _ = writeln!(out, "    {}: [", json_str(path));
                for (fi, f) in findings.iter().enumerate() {
                    out.push_str("      {");
                    if let (true, Some(c)) = (plaintext, &f.candidate) {
                        let _ = write!(out, "\"candidate\": {}, ", json_str(c));
                    }
                    let _ = write!(
                        out,
                        "\"candidate_hash\": {}, \"detector\": {}, \"entropy_bits\": {:.4}, \"label\": {}, \"line\": {}, \"score\": {}",
                        json_str(&f.candidate_hash),
                        json_str(f.detector.as_str()),
                        f.entropy_bits,
                        json_str(f.label.as_str()),
                        f.line_number,
                        f.score.map_or_else(|| "null".to_string(), |s| format!("{s:.4}")),
                    );
                    out.push('}');
                    if fi + 1 < findings.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                out.push_str("    ]");
                if pi + 1 < n_paths {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str("  },\n");
        }
        let _ = writeln!(out, "  \"version\": {}", json_str(&self.version));
        out.push_str("}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self, ScanError> {
        let raw: RawBaseline =
            serde_json::from_str(text).map_err(|e| ScanError::Format(e.to_string()))?;
        if raw.version != BASELINE_VERSION {
            return Err(ScanError::Format(format!(
                "unsupported baseline version {:?} (expected {BASELINE_VERSION})",
                raw.version
            )));
        }
        let mut findings = Vec::new();
        for (path, list) in raw.results {
            for r in list {
                findings.push(r.into_finding(&path)?);
            }
        }
        Ok(Baseline::with_timestamp(raw.detectors, findings, raw.generated_at))
    }

    pub fn save(&self, path: &Path, plaintext: bool) -> Result<(), ScanError> {
        std::fs::write(path, self.to_json(plaintext))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScanError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBaseline {
    version: String,
    generated_at: String,
    detectors: Vec<Detector>,
    results: BTreeMap<String, Vec<RawFinding>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFinding {
    #[serde(default)]
    candidate: Option<String>,
    candidate_hash: String,
    detector: Detector,
    entropy_bits: f64,
    label: Label,
    line: usize,
    score: Option<f64>,
}

impl RawFinding {
    fn into_finding(self, path: &str) -> Result<Finding, ScanError> {
        let bad = |msg: String| Err(ScanError::Format(format!("{path}:{}: {msg}", self.line)));
        if self.line == 0 {
            return bad("line numbers start at 1".into());
        }
        if self.candidate_hash.len() != 64
            || !self
                .candidate_hash
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return bad("candidate_hash must be 64 lowercase hex characters".into());
        }
        if let Some(c) = &self.candidate {
            if c.is_empty() || sha256_hex(c) != self.candidate_hash {
                return bad("candidate does not match candidate_hash".into());
            }
        }
        if !(self.entropy_bits >= 0.0) {
            return bad("entropy_bits must be non-negative".into());
        }
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return bad(format!("score {s} outside [0, 1]"));
            }
        }
        Ok(Finding {
            path: path.to_string(),
            line_number: self.line,
            detector: self.detector,
            candidate: self.candidate,
            candidate_hash: self.candidate_hash,
            entropy_bits: self.entropy_bits,
            label: self.label,
            score: self.score,
        })
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Findings present in only one of two baselines, plus `new` with labels
/// carried over from `old` for findings present in both.
#[derive(Debug, Clone)]
pub struct BaselineDiff {
    pub added: Vec<Finding>,
    pub removed: Vec<Finding>,
    pub merged: Baseline,
}

pub fn diff_baselines(old: &Baseline, new: &Baseline) -> Result<BaselineDiff, ScanError> {
    if old.version != new.version {
        return Err(ScanError::Format(format!(
            "baseline versions differ: {} vs {}",
            old.version, new.version
        )));
    }
    let old_labels: HashMap<_, Label> = old.findings().map(|f| (f.key(), f.label)).collect();
    let new_keys: BTreeSet<_> = new.findings().map(Finding::key).collect();

    let removed = old
        .findings()
        .filter(|f| !new_keys.contains(&f.key()))
        .cloned()
        .collect();
    let mut added = Vec::new();
    let mut merged = new.clone();
    for f in merged.findings_mut() {
        match old_labels.get(&f.key()) {
            Some(label) => {
                if *label != Label::Unlabeled {
                    f.label = *label;
                }
            }
            None => added.push(f.clone()),
        }
    }
    Ok(BaselineDiff {
        added,
        removed,
        merged,
    })
}
