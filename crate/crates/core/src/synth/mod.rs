//! Synthetic secrets sampled from regular-expression templates, used to
//! augment the minority class when training the document classifier.

mod pattern;

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scan::{Label, DEFAULT_KEYWORDS};
use crate::text::{normalize_row, Row, Stopwords};

pub use pattern::{parse_pattern, Node, PatternError};

pub const DEFAULT_MAX_REPEAT: u32 = 8;
pub const SYNTHETIC_PAGE_ID: &str = "synthetic";

/// Draws one string matched by `ast`. Unbounded repeats draw their length
/// uniformly from `[min, max(min, max_repeat)]`; every other choice point is
/// uniform too.
pub fn sample<R: Rng + ?Sized>(ast: &Node, rng: &mut R, max_repeat: u32) -> String {
    let mut out = String::new();
    sample_into(ast, rng, max_repeat, &mut out);
    out
}

fn sample_into<R: Rng + ?Sized>(ast: &Node, rng: &mut R, max_repeat: u32, out: &mut String) {
    match ast {
        Node::Literal(c) => out.push(*c),
        Node::Class(set) => {
            let i = rng.gen_range(0..set.len());
            out.push(*set.iter().nth(i).expect("index below len"));
        }
        Node::Concat(items) => {
            for n in items {
                sample_into(n, rng, max_repeat, out);
            }
        }
        Node::Alternation(branches) => {
            let i = rng.gen_range(0..branches.len());
            sample_into(&branches[i], rng, max_repeat, out);
        }
        Node::Group(inner) => sample_into(inner, rng, max_repeat, out),
        Node::Repeat { node, min, max } => {
            let hi = max.unwrap_or((*min).max(max_repeat));
            let n = rng.gen_range(*min..=hi);
            for _ in 0..n {
                sample_into(node, rng, max_repeat, out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("match set exceeds the limit of {limit} strings")]
pub struct CapacityError {
    pub limit: usize,
}

/// The exact set of strings matched by `ast`, with unbounded repeats capped
/// at `max_repeat`.
pub fn enumerate_matches(
    ast: &Node,
    limit: usize,
    max_repeat: u32,
) -> Result<BTreeSet<String>, CapacityError> {
    let check = |set: BTreeSet<String>| {
        if set.len() > limit {
            Err(CapacityError { limit })
        } else {
            Ok(set)
        }
    };
    match ast {
        Node::Literal(c) => check(BTreeSet::from([c.to_string()])),
        Node::Class(set) => check(set.iter().map(char::to_string).collect()),
        Node::Group(inner) => enumerate_matches(inner, limit, max_repeat),
        Node::Alternation(branches) => {
            let mut out = BTreeSet::new();
            for b in branches {
                out.extend(enumerate_matches(b, limit, max_repeat)?);
                if out.len() > limit {
                    return Err(CapacityError { limit });
                }
            }
            Ok(out)
        }
        Node::Concat(items) => {
            let mut acc = BTreeSet::from([String::new()]);
            for n in items {
                let next = enumerate_matches(n, limit, max_repeat)?;
                acc = product(&acc, &next, limit)?;
            }
            Ok(acc)
        }
        Node::Repeat { node, min, max } => {
            let hi = max.unwrap_or((*min).max(max_repeat));
            let child = if hi == 0 {
                BTreeSet::new()
            } else {
                enumerate_matches(node, limit, max_repeat)?
            };
            let mut out = BTreeSet::new();
            let mut power = BTreeSet::from([String::new()]);
            for k in 0..=hi {
                if k > 0 {
                    power = product(&power, &child, limit)?;
                }
                if k >= *min {
                    out.extend(power.iter().cloned());
                    if out.len() > limit {
                        return Err(CapacityError { limit });
                    }
                }
            }
            Ok(out)
        }
    }
}

fn product(
    left: &BTreeSet<String>,
    right: &BTreeSet<String>,
    limit: usize,
) -> Result<BTreeSet<String>, CapacityError> {
    let mut out = BTreeSet::new();
    for a in left {
        for b in right {
            out.insert(format!("{a}{b}"));
            if out.len() > limit {
                return Err(CapacityError { limit });
            }
        }
    }
    Ok(out)
}

/// A named pattern for synthetic secrets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecretTemplate {
    pub name: String,
    pub pattern: String,
    pub weight: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {name:?}: {source}")]
    Pattern {
        name: String,
        #[source]
        source: PatternError,
    },
    #[error("template {0:?}: weight must be positive")]
    Weight(String),
    #[error("template catalog is empty")]
    Empty,
    #[error("template catalog: {0}")]
    Json(#[from] serde_json::Error),
}

/// AWS-style key ids, 32-character hex, 24-character base64-like strings and
/// word-digit passwords.
pub fn default_catalog() -> Vec<SecretTemplate> {
    let t = |name: &str, pattern: &str| SecretTemplate {
        name: name.into(),
        pattern: pattern.into(),
        weight: 1.0,
    };
    vec![
        t("aws-access-key-id", "AKIA[0-9A-Z]{16}"),
        t("hex-32", "[0-9a-f]{32}"),
        t("base64-24", "[A-Za-z0-9+/]{24}"),
        t("word-digit-password", r"[a-z]{6}\d{2}"),
    ]
}

pub fn parse_catalog(json: &str) -> Result<Vec<SecretTemplate>, TemplateError> {
    let templates: Vec<SecretTemplate> = serde_json::from_str(json)?;
    compile_templates(&templates)?;
    Ok(templates)
}

fn compile_templates(templates: &[SecretTemplate]) -> Result<Vec<Node>, TemplateError> {
    if templates.is_empty() {
        return Err(TemplateError::Empty);
    }
    templates
        .iter()
        .map(|t| {
            if !(t.weight > 0.0 && t.weight.is_finite()) {
                return Err(TemplateError::Weight(t.name.clone()));
            }
            parse_pattern(&t.pattern).map_err(|source| TemplateError::Pattern {
                name: t.name.clone(),
                source,
            })
        })
        .collect()
}

/// `n` secret-labeled rows of the form `<keyword> = <sampled secret>`, with
/// templates chosen by weight and keywords rotating through the default
/// denylist.
pub fn generate_synthetic_secrets(
    templates: &[SecretTemplate],
    n: usize,
    seed: u64,
    stopwords: &Stopwords,
) -> Result<Vec<Row>, TemplateError> {
    let asts = compile_templates(templates)?;
    let weights = WeightedIndex::new(templates.iter().map(|t| t.weight))
        .map_err(|_| TemplateError::Weight("catalog".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| {
            let ast = &asts[weights.sample(&mut rng)];
            let secret = sample(ast, &mut rng, DEFAULT_MAX_REPEAT);
            let keyword = DEFAULT_KEYWORDS[i % DEFAULT_KEYWORDS.len()];
            let raw = format!("{keyword} = {secret}");
            Row {
                page_id: SYNTHETIC_PAGE_ID.into(),
                line_number: i + 1,
                tokens: normalize_row(&raw, stopwords),
                raw,
                label: Label::Secret,
            }
        })
        .collect())
}
