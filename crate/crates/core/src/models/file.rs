use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{predict_gbdt, predict_logistic, GbdtModel, LogisticModel, ModelError, TrainConfig};
use crate::eval::MetricsReport;
use crate::features::{CodeFeatureSpec, FeatureVector, TfIdfModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum Parameters {
    Logistic(LogisticModel),
    Gbdt(GbdtModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Featurizer {
    Code(CodeFeatureSpec),
    Docs(TfIdfModel),
}

impl Featurizer {
    pub fn fingerprint(&self) -> String {
        match self {
            Featurizer::Code(s) => s.fingerprint(),
            Featurizer::Docs(m) => m.fingerprint(),
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Featurizer::Code(s) => s.dimension(),
            Featurizer::Docs(m) => m.dimension(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub train_positives: usize,
    #[serde(default)]
    pub synthetic_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub validation: Option<MetricsReport>,
    pub test: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub config: TrainConfig,
    pub data: DataSizes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<SplitMetrics>,
    pub threshold_warning: bool,
    pub trained_at: String,
}

/// A trained classifier together with the featurizer it was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kind: String,
    pub parameters: Parameters,
    pub featurizer: Featurizer,
    pub threshold: f64,
    pub metadata: TrainingMetadata,
    pub spec_fingerprint: String,
}

impl ModelFile {
    pub fn new(parameters: Parameters, featurizer: Featurizer, threshold: f64, metadata: TrainingMetadata) -> Self {
        let kind = match &parameters {
            Parameters::Logistic(_) => "logistic",
            Parameters::Gbdt(_) => "gbdt",
        };
        let spec_fingerprint = featurizer.fingerprint();
        let mut file = ModelFile {
            kind: kind.into(),
            parameters,
            featurizer,
            threshold,
            metadata,
            spec_fingerprint,
        };
        file.sync_threshold();
        file
    }

    fn sync_threshold(&mut self) {
        match &mut self.parameters {
            Parameters::Logistic(m) => {
                m.threshold = self.threshold;
                m.spec_fingerprint = self.spec_fingerprint.clone();
            }
            Parameters::Gbdt(m) => m.threshold = self.threshold,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |m: &str| Err(ModelError::Invalid(m.to_string()));
        if self.spec_fingerprint != self.featurizer.fingerprint() {
            return invalid("spec_fingerprint does not match the featurizer");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return invalid("threshold outside [0, 1]");
        }
        let dim = self.featurizer.dimension();
        match (&self.parameters, self.kind.as_str()) {
            (Parameters::Logistic(m), "logistic") => {
                m.validate()?;
                if m.dimension() != dim {
                    return Err(ModelError::Shape { expected: dim, got: m.dimension() });
                }
            }
            (Parameters::Gbdt(m), "gbdt") => {
                m.validate()?;
                if m.n_features != dim {
                    return Err(ModelError::Shape { expected: dim, got: m.n_features });
                }
            }
            _ => return invalid("kind does not match parameters"),
        }
        Ok(())
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<f64, ModelError> {
        match &self.parameters {
            Parameters::Logistic(m) => predict_logistic(m, fv),
            Parameters::Gbdt(m) => {
                if fv.dimension() != m.n_features {
                    return Err(ModelError::Shape { expected: m.n_features, got: fv.dimension() });
                }
                Ok(predict_gbdt(m, fv))
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let mut file: ModelFile =
            serde_json::from_str(json).map_err(|e| ModelError::Invalid(e.to_string()))?;
        file.validate()?;
        file.sync_threshold();
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json() + "\n")
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&json)
    }
}
