//! Logistic regression for code findings, gradient-boosted trees for
//! document rows, and recall-oriented threshold tuning.

mod file;
mod gbdt;
mod logistic;
mod threshold;

use serde::{Deserialize, Serialize};

use crate::features::FeatureVector;

pub use file::{DataSizes, Featurizer, ModelFile, Parameters, TrainingMetadata, SplitMetrics};
pub use gbdt::{predict_gbdt, train_gbdt, GbdtModel, Tree, TreeNode};
pub use logistic::{
    gradient_logloss, logloss, predict_logistic, train_logistic, Gradient, LogisticModel,
};
pub use threshold::{tune_threshold, ThresholdChoice};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("feature dimension {got} does not match model dimension {expected}")]
    Shape { expected: usize, got: usize },
    #[error("training data is empty")]
    Empty,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("loss became non-finite at epoch {epoch}; try a smaller learning rate")]
    Diverged { epoch: usize },
    #[error("no positive labels; recall is undefined")]
    NoPositives,
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    Misaligned { scores: usize, labels: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid model file: {0}")]
    Invalid(String),
}

/// A feature vector with its gold label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureVector,
    pub label: bool,
}

impl Example {
    pub fn new(features: FeatureVector, label: bool) -> Self {
        Example { features, label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_lambda: f64,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_child_hessian: f64,
    /// Weight on positive examples; `None` means `n_neg / n_pos`, capped at 100.
    pub positive_weight: Option<f64>,
    pub target_recall: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 500,
            l2_lambda: 1.0,
            n_trees: 100,
            max_depth: 4,
            min_child_hessian: 1.0,
            positive_weight: None,
            target_recall: 0.99,
            seed: 42,
        }
    }
}

pub const MAX_POSITIVE_WEIGHT: f64 = 100.0;

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::Config(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be non-negative");
        }
        if !(self.min_child_hessian >= 0.0 && self.min_child_hessian.is_finite()) {
            return bad("min_child_hessian must be non-negative");
        }
        if self.positive_weight.is_some_and(|w| !(w > 0.0 && w.is_finite())) {
            return bad("positive_weight must be positive");
        }
        if !(self.target_recall > 0.0 && self.target_recall <= 1.0) {
            return bad("target_recall must be in (0, 1]");
        }
        Ok(())
    }

    pub fn positive_weight_for(&self, n_pos: usize, n_neg: usize) -> f64 {
        self.positive_weight
            .unwrap_or_else(|| (n_neg as f64 / n_pos.max(1) as f64).min(MAX_POSITIVE_WEIGHT))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[y ln σ(z) + (1-y) ln(1-σ(z))]`, computed without forming σ(z).
pub(crate) fn logit_loss(z: f64, y: bool) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    if y {
        softplus - z
    } else {
        softplus
    }
}

/// Common checks for both trainers; returns the shared dimension and the
/// per-example weights.
pub(crate) fn prepare(data: &[Example], config: &TrainConfig) -> Result<(usize, Vec<f64>), ModelError> {
    config.validate()?;
    let first = data.first().ok_or(ModelError::Empty)?;
    let dim = first.features.dimension();
    if let Some(bad) = data.iter().find(|e| e.features.dimension() != dim) {
        return Err(ModelError::Shape {
            expected: dim,
            got: bad.features.dimension(),
        });
    }
    let n_pos = data.iter().filter(|e| e.label).count();
    let n_neg = data.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ModelError::SingleClass);
    }
    let pw = config.positive_weight_for(n_pos, n_neg);
    Ok((dim, data.iter().map(|e| if e.label { pw } else { 1.0 }).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(50.0) >= 1.0 - 1e-20);
        assert!(sigmoid(-800.0) >= 0.0);
    }

    #[test]
    fn logit_loss_matches_definition() {
        for z in [-5.0, -0.3, 0.0, 0.7, 4.0] {
            let p = sigmoid(z);
            assert!((logit_loss(z, true) + p.ln()).abs() < 1e-12);
            assert!((logit_loss(z, false) + (1.0 - p).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn default_positive_weight() {
        let c = TrainConfig::default();
        assert_eq!(c.positive_weight_for(10, 30), 3.0);
        assert_eq!(c.positive_weight_for(1, 1000), 100.0);
        let fixed = TrainConfig { positive_weight: Some(2.5), ..c };
        assert_eq!(fixed.positive_weight_for(1, 1000), 2.5);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for c in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { target_recall: 0.0, ..Default::default() },
            TrainConfig { target_recall: 1.5, ..Default::default() },
            TrainConfig { positive_weight: Some(-1.0), ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(ModelError::Config(_))));
        }
    }
}
