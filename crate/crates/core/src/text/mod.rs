//! Document pages to normalized text rows.

mod html;
mod porter;

use std::collections::HashSet;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::features::tokenize;
use crate::scan::Label;

pub use html::html_to_text;
pub use porter::stem;

/// One page of a document platform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub id: String,
    pub title: String,
    pub html: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<String>,
}

/// One non-blank line of extracted page text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub page_id: String,
    pub line_number: usize,
    pub raw: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub label: Label,
}

/// Stable identity of a row: the hash of its page id and line number.
pub fn row_id(page_id: &str, line_number: usize) -> String {
    crate::scan::sha256_hex(&format!("{page_id}\n{line_number}"))
}

impl Row {
    pub fn id(&self) -> String {
        row_id(&self.page_id, self.line_number)
    }
}

const DEFAULT_STOPWORDS: &str = include_str!("stopwords.txt");

/// Stopword set used by [`normalize_row`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Default for Stopwords {
    fn default() -> Self {
        Stopwords::parse(DEFAULT_STOPWORDS)
    }
}

impl Stopwords {
    /// One word per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Stopwords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Stopwords::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

struct Mask {
    pattern: Regex,
    token: &'static str,
}

static MASKS: LazyLock<Vec<Mask>> = LazyLock::new(|| {
    let mask = |pattern: &str, token| Mask {
        pattern: Regex::new(pattern).expect("mask pattern compiles"),
        token,
    };
    vec![
        mask(r"[A-Za-z][A-Za-z0-9+.\-]*://\S+", "urltok"),
        mask(r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9.\-]+\.[A-Za-z]{2,}", "emailtok"),
        mask(
            r"\b(?:(?:25[0-5]|2[0-4][0-9]|1[0-9]{2}|[1-9]?[0-9])\.){3}(?:25[0-5]|2[0-4][0-9]|1[0-9]{2}|[1-9]?[0-9])\b",
            "iptok",
        ),
        mask(r"\b[0-9A-Fa-f]{16,}\b", "hextok"),
        mask(r"\b[0-9]+\b", "numtok"),
    ]
});

fn mask_once(text: &str) -> String {
    let mut out = text.to_string();
    for m in MASKS.iter() {
        if m.pattern.is_match(&out) {
            out = m.pattern.replace_all(&out, m.token).into_owned();
        }
    }
    out
}

/// Replaces URLs, emails, IPv4 addresses, long hex runs and standalone
/// numbers with the placeholder words `urltok`, `emailtok`, `iptok`,
/// `hextok` and `numtok`, in that order.
///
/// The passes repeat until nothing changes, so the result is a fixed point:
/// a number masked next to an email domain can otherwise form a new email.
pub fn mask_technical(text: &str) -> String {
    let mut current = mask_once(text);
    // every pass that changes the text removes digits or shortens a match;
    // the bound only guards against a pattern regression
    for _ in 0..16 {
        let next = mask_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn keep(stopwords: &Stopwords, token: &str) -> bool {
    !stopwords.contains(token)
}

/// Masks, lowercases, strips special characters, tokenizes, drops stopwords
/// and stems what remains.
pub fn normalize_row(text: &str, stopwords: &Stopwords) -> Vec<String> {
    let masked = mask_technical(text).to_lowercase();
    let cleaned: String = masked
        .chars()
        .map(|c| {
            if c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == ' ' {
                c
            } else {
                ' '
            }
        })
        .collect();
    tokenize(&cleaned)
        .into_iter()
        .filter(|t| keep(stopwords, t))
        .map(|t| stem(&t))
        // stemming can land on a stopword ("ands" -> "and")
        .filter(|t| keep(stopwords, t))
        .collect()
}

/// Splits a page into rows, one per non-blank line of extracted text.
pub fn page_to_rows(page: &Page, stopwords: &Stopwords) -> Vec<Row> {
    html_to_text(&page.html)
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, raw)| Row {
            page_id: page.id.clone(),
            line_number: i + 1,
            raw: raw.to_string(),
            tokens: normalize_row(raw, stopwords),
            label: Label::Unlabeled,
        })
        .collect()
}
