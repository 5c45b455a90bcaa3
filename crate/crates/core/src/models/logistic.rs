use serde::{Deserialize, Serialize};

use super::{logit_loss, prepare, sigmoid, Example, ModelError, TrainConfig};
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub spec_fingerprint: String,
}

impl LogisticModel {
    pub fn zeros(dimension: usize) -> Self {
        LogisticModel {
            weights: vec![0.0; dimension],
            bias: 0.0,
            threshold: 0.5,
            spec_fingerprint: String::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    fn logit(&self, fv: &FeatureVector) -> f64 {
        fv.dot(&self.weights) + self.bias
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.weights.iter().all(|w| w.is_finite()) || !self.bias.is_finite() {
            return Err(ModelError::Invalid("non-finite logistic parameter".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ModelError::Invalid("threshold outside [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn predict_logistic(model: &LogisticModel, fv: &FeatureVector) -> Result<f64, ModelError> {
    if fv.dimension() != model.dimension() {
        return Err(ModelError::Shape {
            expected: model.dimension(),
            got: fv.dimension(),
        });
    }
    Ok(sigmoid(model.logit(fv)))
}

/// Gradient of [`logloss`] with respect to the weights and the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Gradient {
    pub fn inf_norm(&self) -> f64 {
        self.weights.iter().fold(self.bias.abs(), |m, g| m.max(g.abs()))
    }
}

/// Weighted mean log-loss plus `(λ / 2n)·‖w‖²`; `example_weights` defaults
/// to all ones.
pub fn logloss(
    model: &LogisticModel,
    batch: &[Example],
    example_weights: Option<&[f64]>,
    l2_lambda: f64,
) -> f64 {
    let n = batch.len() as f64;
    let (mut total, mut mass) = (0.0, 0.0);
    for (i, e) in batch.iter().enumerate() {
        let w = example_weights.map_or(1.0, |ws| ws[i]);
        total += w * logit_loss(model.logit(&e.features), e.label);
        mass += w;
    }
    let norm: f64 = model.weights.iter().map(|w| w * w).sum();
    total / mass + l2_lambda / (2.0 * n) * norm
}

pub fn gradient_logloss(
    model: &LogisticModel,
    batch: &[Example],
    example_weights: Option<&[f64]>,
    l2_lambda: f64,
) -> Gradient {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.dimension()];
    let (mut bias, mut mass) = (0.0, 0.0);
    for (i, e) in batch.iter().enumerate() {
        let w = example_weights.map_or(1.0, |ws| ws[i]);
        let y = if e.label { 1.0 } else { 0.0 };
        let r = w * (sigmoid(model.logit(&e.features)) - y);
        for &(j, x) in e.features.entries() {
            grad[j] += r * x;
        }
        bias += r;
        mass += w;
    }
    for (g, w) in grad.iter_mut().zip(&model.weights) {
        *g = *g / mass + l2_lambda / n * w;
    }
    Gradient {
        weights: grad,
        bias: bias / mass,
    }
}

/// Full-batch gradient descent from zero. Returns the model and the loss
/// before each update, with the final loss appended.
pub fn train_logistic(
    data: &[Example],
    config: &TrainConfig,
) -> Result<(LogisticModel, Vec<f64>), ModelError> {
    let (dim, weights) = prepare(data, config)?;
    let mut model = LogisticModel::zeros(dim);
    let mut curve = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        let loss = logloss(&model, data, Some(&weights), config.l2_lambda);
        if !loss.is_finite() {
            return Err(ModelError::Diverged { epoch });
        }
        curve.push(loss);
        let g = gradient_logloss(&model, data, Some(&weights), config.l2_lambda);
        if g.inf_norm() < 1e-6 {
            return Ok((model, curve));
        }
        for (w, gw) in model.weights.iter_mut().zip(&g.weights) {
            *w -= config.learning_rate * gw;
        }
        model.bias -= config.learning_rate * g.bias;
    }
    let loss = logloss(&model, data, Some(&weights), config.l2_lambda);
    if !loss.is_finite() || model.validate().is_err() {
        return Err(ModelError::Diverged { epoch: config.epochs });
    }
    curve.push(loss);
    Ok((model, curve))
}
