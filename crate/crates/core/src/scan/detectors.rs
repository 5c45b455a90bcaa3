//! Line detectors.
//!
//! Every detector is a pure function of its input line and configuration.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;

use super::{shannon_entropy, Detector, DetectorConfig, Finding};

static PRIVATE_KEY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-----BEGIN (?:[A-Z0-9]+ )*PRIVATE KEY-----").unwrap());
static AWS_KEY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"AKIA[0-9A-Z]{16}").unwrap());
/// Text preceding the value of a key that names a digest, e.g. `"sha256": "`.
static DIGEST_FIELD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)(?:hash|digest|checksum|sha1|sha256|sha512|integrity)["']?\s*[:=]\s*["']?(?:sha\d+[:-])?$"#)
        .unwrap()
});

/// A candidate located within a single line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detection {
    pub detector: Detector,
    pub candidate: String,
    /// Byte range of the candidate within the line.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Charset {
    Base64,
    Hex,
}

impl Charset {
    fn contains(self, c: char) -> bool {
        match self {
            Charset::Base64 => c.is_ascii_alphanumeric() || matches!(c, '+' | '/' | '='),
            Charset::Hex => c.is_ascii_hexdigit(),
        }
    }

    fn detector(self) -> Detector {
        match self {
            Charset::Base64 => Detector::Base64Entropy,
            Charset::Hex => Detector::HexEntropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    PrivateKey,
    AwsKey,
}

/// Compiled form of a [`DetectorConfig`]; reuse it when scanning many lines.
#[derive(Debug, Clone)]
pub struct LineDetector {
    config: DetectorConfig,
    keyword: Option<Regex>,
}

impl LineDetector {
    pub fn new(config: &DetectorConfig) -> Self {
        let keyword = if config.keyword_denylist.is_empty() {
            None
        } else {
            let alternation = config
                .keyword_denylist
                .iter()
                .map(|k| regex::escape(k))
                .collect::<Vec<_>>()
                .join("|");
            // identifier ending in a keyword, an optional closing quote on the
            // key, then one of the separators
            let pattern = format!(
                r#"(?i)(?:^|[^A-Za-z0-9_])[A-Za-z0-9_]*?(?:{alternation})["']?\s*(?::=|=>|=|:)\s*"#
            );
            Some(Regex::new(&pattern).expect("escaped keyword pattern compiles"))
        };
        LineDetector {
            config: config.clone(),
            keyword,
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn keyword(&self, line: &str) -> Vec<Detection> {
        let Some(re) = &self.keyword else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut pos = 0;
        while pos <= line.len() {
            let Some(m) = re.find_at(line, pos) else { break };
            let (span, next) = value_after(line, m.end());
            pos = next.max(m.end()).max(pos + 1);
            let candidate = &line[span.clone()];
            if self.keep_keyword_candidate(candidate, &line[span.end..], line[..span.start].ends_with(['"', '\''])) {
                out.push(Detection {
                    detector: Detector::Keyword,
                    candidate: candidate.to_string(),
                    span,
                });
            }
        }
        out
    }

    fn keep_keyword_candidate(&self, candidate: &str, after: &str, quoted: bool) -> bool {
        if candidate.chars().count() < 4 {
            return false;
        }
        let lower = candidate.to_lowercase();
        if self.config.placeholders.iter().any(|p| p.to_lowercase() == lower) {
            return false;
        }
        // variable references and template interpolations are not literals
        if candidate.starts_with('$') || candidate.starts_with("{{") {
            return false;
        }
        // unquoted call expression, e.g. `password = get_secret("password")`
        if !quoted && after.starts_with('(') {
            return false;
        }
        true
    }

    pub fn high_entropy(&self, line: &str, charset: Charset) -> Vec<Detection> {
        let threshold = match charset {
            Charset::Base64 => self.config.base64_threshold,
            Charset::Hex => self.config.hex_threshold,
        };
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        let push_run = |range: Range<usize>, out: &mut Vec<Detection>| {
            let candidate = &line[range.clone()];
            if candidate.len() >= self.config.min_candidate_len
                && shannon_entropy(candidate) >= threshold
            {
                out.push(Detection {
                    detector: charset.detector(),
                    candidate: candidate.to_string(),
                    span: range,
                });
            }
        };
        for (i, c) in line.char_indices() {
            match (charset.contains(c), start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    push_run(s..i, &mut out);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            push_run(s..line.len(), &mut out);
        }
        out
    }

    /// All enabled detectors on one line, in detector order.
    pub fn detect(&self, line: &str) -> Vec<Detection> {
        let mut out = Vec::new();
        for detector in &self.config.enabled {
            match detector {
                Detector::Keyword => out.extend(self.keyword(line)),
                Detector::Base64Entropy => out.extend(self.high_entropy(line, Charset::Base64)),
                Detector::HexEntropy => out.extend(self.high_entropy(line, Charset::Hex)),
                Detector::PrivateKey => out.extend(detect_pattern(line, PatternKind::PrivateKey)),
                Detector::AwsKey => out.extend(detect_pattern(line, PatternKind::AwsKey)),
            }
        }
        out
    }

    /// Findings for one physical line of `path`. Entropy candidates stored
    /// under a digest-named key are dropped: they are content hashes.
    pub fn findings(&self, path: &str, line_number: usize, line: &str) -> Vec<Finding> {
        self.detect(line)
            .into_iter()
            .filter(|d| {
                !matches!(d.detector, Detector::Base64Entropy | Detector::HexEntropy)
                    || !DIGEST_FIELD.is_match(&line[..d.span.start])
            })
            .map(|d| Finding::new(path, line_number, d.detector, d.candidate))
            .collect()
    }
}

/// Value token starting at or after `start`: a quoted string (quotes
/// stripped) or a run of non-delimiter characters. Returns the value span and
/// the offset at which scanning may resume.
fn value_after(line: &str, start: usize) -> (Range<usize>, usize) {
    let rest = &line[start..];
    if let Some(q) = rest.chars().next().filter(|c| matches!(c, '"' | '\'' | '`')) {
        let body = start + q.len_utf8();
        return match line[body..].find(q) {
            Some(end) => (body..body + end, body + end + q.len_utf8()),
            None => {
                let end = unquoted_end(line, body);
                (body..end, end)
            }
        };
    }
    let end = unquoted_end(line, start);
    (start..end, end)
}

fn unquoted_end(line: &str, start: usize) -> usize {
    line[start..]
        .find(|c: char| {
            c.is_whitespace() || matches!(c, '"' | '\'' | '`' | ',' | ';' | '(' | ')' | ']' | '}')
        })
        .map_or(line.len(), |i| start + i)
}

/// Keyword assignments such as `password = "hunter2"` or `api_key: abc123`.
pub fn detect_keyword(line: &str, config: &DetectorConfig) -> Vec<Detection> {
    LineDetector::new(config).keyword(line)
}

/// Maximal runs over `charset` at least `min_candidate_len` long whose entropy
/// reaches the charset's threshold.
pub fn detect_high_entropy(line: &str, charset: Charset, config: &DetectorConfig) -> Vec<Detection> {
    LineDetector::new(config).high_entropy(line, charset)
}

pub fn detect_pattern(line: &str, kind: PatternKind) -> Vec<Detection> {
    match kind {
        PatternKind::PrivateKey => {
            if !PRIVATE_KEY.is_match(line) {
                return Vec::new();
            }
            let trimmed = line.trim();
            let start = line.len() - line.trim_start().len();
            vec![Detection {
                detector: Detector::PrivateKey,
                candidate: trimmed.to_string(),
                span: start..start + trimmed.len(),
            }]
        }
        PatternKind::AwsKey => AWS_KEY
            .find_iter(line)
            .map(|m| Detection {
                detector: Detector::AwsKey,
                candidate: m.as_str().to_string(),
                span: m.range(),
            })
            .collect(),
    }
}

/// Runs every enabled detector over `line`.
pub fn detect_line(line: &str, config: &DetectorConfig) -> Vec<Detection> {
    LineDetector::new(config).detect(line)
}
