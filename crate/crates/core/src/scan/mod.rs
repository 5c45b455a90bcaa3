//! Heuristic secret detection over source trees.
//!
//! Detectors run line by line and produce [`Finding`]s. A full scan of a tree
//! is captured as a [`Baseline`], which is deterministic for a fixed tree and
//! configuration and serves as the unit of diffing, labeling and auditing.

mod baseline;
mod detectors;
mod entropy;
mod tree;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use baseline::{diff_baselines, Baseline, BaselineDiff, BASELINE_VERSION};
pub use detectors::{
    detect_high_entropy, detect_keyword, detect_line, detect_pattern, Charset, Detection,
    LineDetector, PatternKind,
};
pub use entropy::shannon_entropy;
pub use tree::{is_binary, scan_tree, ScanOutput, ScanStats};

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("cannot read scan root {path}: {source}")]
    Root {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid detector config: {0}")]
    Config(String),
    #[error("baseline format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Detector names, ordered by their serialized name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detector {
    AwsKey,
    Base64Entropy,
    HexEntropy,
    Keyword,
    PrivateKey,
}

impl Detector {
    pub const ALL: [Detector; 5] = [
        Detector::AwsKey,
        Detector::Base64Entropy,
        Detector::HexEntropy,
        Detector::Keyword,
        Detector::PrivateKey,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Detector::AwsKey => "aws-key",
            Detector::Base64Entropy => "base64-entropy",
            Detector::HexEntropy => "hex-entropy",
            Detector::Keyword => "keyword",
            Detector::PrivateKey => "private-key",
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Detector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Detector::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown detector {s:?}"))
    }
}

/// Review state of a finding or row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    #[default]
    Unlabeled,
    Secret,
    NotSecret,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Unlabeled => "unlabeled",
            Label::Secret => "secret",
            Label::NotSecret => "not_secret",
        }
    }

    /// `Some(true)` for secret, `Some(false)` for not_secret.
    pub fn gold(self) -> Option<bool> {
        match self {
            Label::Unlabeled => None,
            Label::Secret => Some(true),
            Label::NotSecret => Some(false),
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unlabeled" => Ok(Label::Unlabeled),
            "secret" => Ok(Label::Secret),
            "not_secret" => Ok(Label::NotSecret),
            other => Err(format!("invalid label {other:?}")),
        }
    }
}

/// Lowercase hex SHA-256 of the UTF-8 bytes of `s`.
pub fn sha256_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// One candidate secret located by a detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub path: String,
    pub line_number: usize,
    pub detector: Detector,
    /// Plaintext candidate. Absent when the finding was loaded from a
    /// baseline written without the plaintext sidecar.
    pub candidate: Option<String>,
    pub candidate_hash: String,
    pub entropy_bits: f64,
    pub label: Label,
    pub score: Option<f64>,
}

impl Finding {
    pub fn new(
        path: impl Into<String>,
        line_number: usize,
        detector: Detector,
        candidate: impl Into<String>,
    ) -> Self {
        let candidate = candidate.into();
        Finding {
            path: path.into(),
            line_number,
            detector,
            candidate_hash: sha256_hex(&candidate),
            entropy_bits: shannon_entropy(&candidate),
            candidate: Some(candidate),
            label: Label::Unlabeled,
            score: None,
        }
    }

    /// Stable identity of the finding across rescans: the hash of
    /// (path, line_number, detector, candidate_hash).
    pub fn id(&self) -> String {
        finding_id(
            &self.path,
            self.line_number,
            self.detector,
            &self.candidate_hash,
        )
    }

    pub(crate) fn key(&self) -> (&str, usize, Detector, &str) {
        (
            &self.path,
            self.line_number,
            self.detector,
            &self.candidate_hash,
        )
    }
}

pub fn finding_id(path: &str, line_number: usize, detector: Detector, candidate_hash: &str) -> String {
    sha256_hex(&format!("{path}\n{line_number}\n{detector}\n{candidate_hash}"))
}

pub const DEFAULT_KEYWORDS: [&str; 10] = [
    "password",
    "passwd",
    "pwd",
    "secret",
    "token",
    "api_key",
    "apikey",
    "private_key",
    "credential",
    "auth_key",
];

pub const DEFAULT_PLACEHOLDERS: [&str; 6] =
    ["none", "null", "true", "false", "changeme", "<password>"];

/// Detector settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub keyword_denylist: Vec<String>,
    pub placeholders: Vec<String>,
    pub base64_threshold: f64,
    pub hex_threshold: f64,
    /// Minimum candidate length for the entropy detectors.
    pub min_candidate_len: usize,
    pub enabled: BTreeSet<Detector>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            keyword_denylist: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            placeholders: DEFAULT_PLACEHOLDERS.iter().map(|s| s.to_string()).collect(),
            base64_threshold: 4.5,
            hex_threshold: 3.0,
            min_candidate_len: 20,
            enabled: Detector::ALL.into_iter().collect(),
        }
    }
}

impl DetectorConfig {
    pub fn with_enabled(mut self, detectors: impl IntoIterator<Item = Detector>) -> Self {
        self.enabled = detectors.into_iter().collect();
        self
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        if !(self.base64_threshold >= 0.0 && self.hex_threshold >= 0.0) {
            return Err(ScanError::Config("entropy thresholds must be >= 0".into()));
        }
        if self.min_candidate_len < 1 {
            return Err(ScanError::Config("min_candidate_len must be >= 1".into()));
        }
        if self.enabled.contains(&Detector::Keyword) && self.keyword_denylist.is_empty() {
            return Err(ScanError::Config(
                "keyword denylist is empty but the keyword detector is enabled".into(),
            ));
        }
        if let Some(bad) = self
            .keyword_denylist
            .iter()
            .find(|k| k.is_empty() || k.chars().any(|c| c.is_uppercase()))
        {
            return Err(ScanError::Config(format!(
                "keywords must be non-empty lowercase strings, got {bad:?}"
            )));
        }
        Ok(())
    }
}
