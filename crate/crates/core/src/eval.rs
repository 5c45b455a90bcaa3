//! Dataset splitting and confusion-matrix metrics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::scan::Label;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("cannot split an empty dataset")]
    EmptySplit,
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    Ratios([f64; 3]),
    #[error("confusion counts are all zero")]
    EmptyCounts,
    #[error("nothing to evaluate")]
    NoItems,
    #[error("{} unlabeled item(s): {}", .0.len(), .0.join(", "))]
    Unlabeled(Vec<String>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    pub fn record(&mut self, predicted: bool, gold: bool) {
        match (predicted, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (p, g) in pairs {
            c.record(p, g);
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFlag {
    /// Nothing was predicted positive.
    PrecisionUndefined,
    /// There are no gold positives.
    RecallUndefined,
    /// Precision and recall are both zero.
    F1Undefined,
}

fn four_places<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((x * 1e4).round() / 1e4)
}

/// Ratios are written with four decimals; on reading they are recomputed
/// from the counts, so a report survives a save/load cycle unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "StoredMetrics")]
pub struct MetricsReport {
    #[serde(serialize_with = "four_places")]
    pub precision: f64,
    #[serde(serialize_with = "four_places")]
    pub recall: f64,
    #[serde(serialize_with = "four_places")]
    pub f1: f64,
    pub counts: ConfusionCounts,
    pub degenerate_flags: BTreeSet<MetricFlag>,
}

#[derive(Deserialize)]
struct StoredMetrics {
    precision: f64,
    recall: f64,
    f1: f64,
    counts: ConfusionCounts,
    degenerate_flags: BTreeSet<MetricFlag>,
}

impl From<StoredMetrics> for MetricsReport {
    fn from(s: StoredMetrics) -> Self {
        compute_metrics(s.counts).unwrap_or(MetricsReport {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            counts: s.counts,
            degenerate_flags: s.degenerate_flags,
        })
    }
}

pub fn compute_metrics(counts: ConfusionCounts) -> Result<MetricsReport, EvalError> {
    if counts.total() == 0 {
        return Err(EvalError::EmptyCounts);
    }
    let mut flags = BTreeSet::new();
    let ratio = |num: u64, den: u64, flag: MetricFlag, flags: &mut BTreeSet<MetricFlag>| {
        if den == 0 {
            flags.insert(flag);
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(counts.tp, counts.tp + counts.fp, MetricFlag::PrecisionUndefined, &mut flags);
    let recall = ratio(counts.tp, counts.tp + counts.fn_, MetricFlag::RecallUndefined, &mut flags);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        flags.insert(MetricFlag::F1Undefined);
        0.0
    };
    Ok(MetricsReport {
        precision,
        recall,
        f1,
        counts,
        degenerate_flags: flags,
    })
}

/// Two decimals, halves rounded up.
pub fn round2(x: f64) -> String {
    format!("{:.2}", (x * 100.0).round() / 100.0)
}

/// Fixed-width table with one row per technique: Precision, Recall, F1.
pub fn render_table(rows: &[(&str, &MetricsReport)]) -> String {
    let width = rows
        .iter()
        .map(|(name, _)| name.len())
        .chain(["Technique".len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  Precision  Recall  F1", "Technique");
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>6}  {}",
            name,
            round2(m.precision),
            round2(m.recall),
            round2(m.f1)
        );
    }
    out
}

/// Train, validation and test partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

/// Per-class seeded shuffle followed by contiguous cuts at
/// `floor(r0 * n)` and `floor((r0 + r1) * n)`. Within each partition items
/// keep their input order.
pub fn stratified_split<T>(
    items: Vec<T>,
    is_positive: impl Fn(&T) -> bool,
    ratios: [f64; 3],
    seed: u64,
) -> Result<Split<T>, EvalError> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(EvalError::Ratios(ratios));
    }
    if items.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part = vec![0u8; items.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..items.len())
            .filter(|&i| is_positive(&items[i]) == class)
            .collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        // the epsilon keeps e.g. (0.7 + 0.1) * 10 from flooring to 7
        let cut1 = ((ratios[0] * n) + 1e-9).floor() as usize;
        let cut2 = (((ratios[0] + ratios[1]) * n) + 1e-9).floor() as usize;
        for (rank, &i) in idx.iter().enumerate() {
            part[i] = if rank < cut1 {
                0
            } else if rank < cut2 {
                1
            } else {
                2
            };
        }
    }
    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (item, p) in items.into_iter().zip(part) {
        match p {
            0 => split.train.push(item),
            1 => split.validation.push(item),
            _ => split.test.push(item),
        }
    }
    Ok(split)
}

/// A scored item with its gold label.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub score: f64,
    pub gold: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub score: f64,
    pub predicted: bool,
    pub gold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub threshold: f64,
    /// Every detection treated as a positive prediction.
    pub heuristic: MetricsReport,
    pub model: MetricsReport,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

impl EvaluationReport {
    pub fn table(&self) -> String {
        render_table(&[("Heuristic detector", &self.heuristic), ("Model", &self.model)])
    }

    pub fn predictions_jsonl(&self) -> String {
        self.predictions
            .iter()
            .map(|p| serde_json::to_string(p).expect("prediction serializes") + "\n")
            .collect()
    }
}

/// Metrics recomputed from per-item predictions.
pub fn metrics_from_predictions(predictions: &[Prediction]) -> Result<MetricsReport, EvalError> {
    compute_metrics(ConfusionCounts::from_pairs(
        predictions.iter().map(|p| (p.predicted, p.gold)),
    ))
}

/// Thresholds the scores (`score >= threshold` is positive) and compares the
/// result with the flag-everything heuristic.
pub fn evaluate_pipeline(items: &[EvalItem], threshold: f64) -> Result<EvaluationReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    let unlabeled: Vec<String> = items
        .iter()
        .filter(|i| i.gold.gold().is_none())
        .map(|i| i.id.clone())
        .collect();
    if !unlabeled.is_empty() {
        return Err(EvalError::Unlabeled(unlabeled));
    }
    let predictions: Vec<Prediction> = items
        .iter()
        .map(|i| Prediction {
            id: i.id.clone(),
            score: i.score,
            predicted: i.score >= threshold,
            gold: i.gold == Label::Secret,
        })
        .collect();
    let heuristic = compute_metrics(ConfusionCounts::from_pairs(
        predictions.iter().map(|p| (true, p.gold)),
    ))?;
    let model = metrics_from_predictions(&predictions)?;
    Ok(EvaluationReport {
        threshold,
        heuristic,
        model,
        predictions,
    })
}
