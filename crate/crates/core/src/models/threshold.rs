use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
    /// Set when only flagging everything meets the target.
    pub warning: bool,
}

/// Sweeps the unique scores and 0 (`score >= t` is positive). Among
/// thresholds with recall at least `target_recall`, keeps the most precise,
/// preferring the higher threshold on ties. When the winner flags every
/// item the result is threshold 0 with `warning` set.
pub fn tune_threshold(
    scores: &[f64],
    labels: &[bool],
    target_recall: f64,
) -> Result<ThresholdChoice, ModelError> {
    if scores.len() != labels.len() {
        return Err(ModelError::Misaligned {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(ModelError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // (threshold, tp, flagged), walking thresholds from high to low
    let mut best: Option<(f64, usize, usize)> = None;
    let (mut tp, mut flagged) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            flagged += 1;
            tp += labels[order[i]] as usize;
            i += 1;
        }
        if (tp as f64) / (positives as f64) < target_recall {
            continue;
        }
        // strictly better precision only: the earlier, higher threshold
        // wins ties
        if best.is_none_or(|(_, btp, bflag)| tp * bflag > btp * flagged) {
            best = Some((t, tp, flagged));
        }
    }
    let n = scores.len();
    match best {
        Some((t, tp, flagged)) if flagged < n => Ok(ThresholdChoice {
            threshold: t,
            recall: tp as f64 / positives as f64,
            precision: tp as f64 / flagged as f64,
            warning: false,
        }),
        _ => Ok(ThresholdChoice {
            threshold: 0.0,
            recall: 1.0,
            precision: positives as f64 / n as f64,
            warning: true,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn split(pos: &[f64], neg: &[f64]) -> (Vec<f64>, Vec<bool>) {
        let scores = pos.iter().chain(neg).copied().collect();
        let labels = pos.iter().map(|_| true).chain(neg.iter().map(|_| false)).collect();
        (scores, labels)
    }

    /// Recall and precision at `t`, computed directly.
    fn at(scores: &[f64], labels: &[bool], t: f64) -> (f64, f64) {
        let flagged: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
        let tp = flagged.iter().zip(labels).filter(|(f, l)| **f && **l).count() as f64;
        let p = labels.iter().filter(|&&l| l).count() as f64;
        let f = flagged.iter().filter(|&&f| f).count() as f64;
        (tp / p, if f > 0.0 { tp / f } else { 0.0 })
    }

    #[test]
    fn separated_scores() {
        let (s, l) = split(&[0.8, 0.9, 0.35], &[0.1, 0.2, 0.29]);
        let c = tune_threshold(&s, &l, 0.99).unwrap();
        assert!(!c.warning);
        assert_eq!(at(&s, &l, c.threshold), (1.0, 1.0));
        assert_eq!(c.threshold, 0.35);
    }

    #[test]
    fn low_positive_forces_fallback() {
        let (s, l) = split(&[0.9, 0.05], &[0.1, 0.2, 0.3]);
        let c = tune_threshold(&s, &l, 0.99).unwrap();
        assert_eq!((c.threshold, c.warning, c.recall), (0.0, true, 1.0));
    }

    #[test]
    fn negative_inside_positive_range() {
        // recall 1 needs t <= 0.6, which flags the 0.65 negative as well;
        // that equals flagging everything, so the fallback applies
        let (s, l) = split(&[0.9, 0.8, 0.7, 0.6], &[0.65]);
        let c = tune_threshold(&s, &l, 0.99).unwrap();
        assert_eq!(c.threshold, 0.0);
        assert!(c.warning);
        assert_eq!(at(&s, &l, 0.6), (1.0, 0.8));
        assert_eq!(at(&s, &l, c.threshold), (1.0, 0.8));
    }

    #[test]
    fn errors() {
        assert_eq!(tune_threshold(&[0.1], &[false], 0.9).unwrap_err(), ModelError::NoPositives);
        assert!(matches!(tune_threshold(&[0.1], &[], 0.9), Err(ModelError::Misaligned { .. })));
    }

    proptest! {
        #[test]
        fn meets_target_or_warns(data in prop::collection::vec((0u8..20, any::<bool>()), 1..60), target in 0.05f64..=1.0) {
            prop_assume!(data.iter().any(|d| d.1));
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 20.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let c = tune_threshold(&scores, &labels, target).unwrap();
            prop_assert!(at(&scores, &labels, c.threshold).0 >= target || (c.warning && c.threshold == 0.0));
        }

        #[test]
        fn matches_exhaustive_sweep(data in prop::collection::vec((0u8..20, any::<bool>()), 1..60), target in 0.05f64..=1.0) {
            prop_assume!(data.iter().any(|d| d.1));
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 20.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let mut candidates: Vec<f64> = scores.clone();
            candidates.push(0.0);
            candidates.sort_by(|a, b| b.total_cmp(a));
            candidates.dedup();
            let mut best: Option<(f64, f64)> = None;
            for &t in &candidates {
                let (r, p) = at(&scores, &labels, t);
                if r >= target && best.is_none_or(|(_, bp)| p > bp + 1e-12) {
                    best = Some((t, p));
                }
            }
            let (t, _) = best.unwrap();
            let flags_all = scores.iter().all(|&s| s >= t);
            let c = tune_threshold(&scores, &labels, target).unwrap();
            if flags_all {
                prop_assert_eq!((c.threshold, c.warning), (0.0, true));
            } else {
                prop_assert_eq!((c.threshold, c.warning), (t, false));
            }
        }
    }
}
