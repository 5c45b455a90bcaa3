//! Training and scoring shared by the commands and the review service.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use secretsift_core::eval::{compute_metrics, stratified_split, ConfusionCounts, MetricsReport, Split, DEFAULT_RATIOS};
use secretsift_core::features::{extension_of, fit_tfidf, transform_tfidf, CodeFeatureSpec, FeatureVector};
use secretsift_core::models::{
    predict_gbdt, predict_logistic, train_gbdt, train_logistic, tune_threshold, DataSizes, Example, Featurizer, ModelFile, Parameters,
    SplitMetrics, ThresholdChoice, TrainConfig, TrainingMetadata,
};
use secretsift_core::scan::{Finding, Label, LineDetector};
use secretsift_core::text::Row;

use crate::labels::LabelStore;

/// A code finding with its plaintext candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSample {
    pub id: String,
    pub candidate: String,
    pub extension: String,
    pub label: Label,
}

/// A document row reduced to its tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct DocSample {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: Label,
}

pub trait Sample: Clone {
    fn id(&self) -> &str;
    fn label(&self) -> Label;
    fn features(&self, featurizer: &Featurizer) -> Result<FeatureVector>;

    fn is_secret(&self) -> bool {
        self.label() == Label::Secret
    }
}

impl Sample for CodeSample {
    fn id(&self) -> &str {
        &self.id
    }

    fn label(&self) -> Label {
        self.label
    }

    fn features(&self, featurizer: &Featurizer) -> Result<FeatureVector> {
        match featurizer {
            Featurizer::Code(spec) => Ok(spec.features(&self.candidate, &self.extension)),
            Featurizer::Docs(_) => bail!("model was trained on document rows, not code findings"),
        }
    }
}

impl Sample for DocSample {
    fn id(&self) -> &str {
        &self.id
    }

    fn label(&self) -> Label {
        self.label
    }

    fn features(&self, featurizer: &Featurizer) -> Result<FeatureVector> {
        match featurizer {
            Featurizer::Docs(tfidf) => Ok(transform_tfidf(&self.tokens, tfidf)),
            Featurizer::Code(_) => bail!("model was trained on code findings, not document rows"),
        }
    }
}

/// The label in the store, falling back to the one stored with the item.
pub fn effective_label(id: &str, own: Label, store: &LabelStore) -> Label {
    store.get(id).unwrap_or(own)
}

/// Fills in missing plaintext candidates by re-running the detectors on the
/// finding's line under `root`. Returns the number still missing.
pub fn recover_candidates(findings: &mut [Finding], root: &Path, detector: &LineDetector) -> usize {
    let mut missing = 0;
    let mut cache: std::collections::HashMap<String, Option<Vec<String>>> = Default::default();
    for f in findings.iter_mut().filter(|f| f.candidate.is_none()) {
        let lines = cache.entry(f.path.clone()).or_insert_with(|| {
            std::fs::read_to_string(root.join(&f.path))
                .ok()
                .map(|t| t.lines().map(str::to_string).collect())
        });
        let found = lines
            .as_ref()
            .and_then(|l| l.get(f.line_number.wrapping_sub(1)))
            .and_then(|line| {
                detector
                    .findings(&f.path, f.line_number, line)
                    .into_iter()
                    .find(|d| d.detector == f.detector && d.candidate_hash == f.candidate_hash)
            });
        match found {
            Some(d) => f.candidate = d.candidate,
            None => missing += 1,
        }
    }
    missing
}

pub fn code_samples(findings: &[Finding], store: &LabelStore) -> Vec<CodeSample> {
    findings
        .iter()
        .filter_map(|f| {
            Some(CodeSample {
                id: f.id(),
                candidate: f.candidate.clone()?,
                extension: extension_of(&f.path),
                label: effective_label(&f.id(), f.label, store),
            })
        })
        .collect()
}

pub fn doc_samples(rows: &[Row], store: &LabelStore, assume_negative: bool) -> Vec<DocSample> {
    rows.iter()
        .map(|r| {
            let id = r.id();
            let mut label = effective_label(&id, r.label, store);
            if assume_negative && label == Label::Unlabeled {
                label = Label::NotSecret;
            }
            DocSample {
                id,
                tokens: r.tokens.clone(),
                label,
            }
        })
        .collect()
}

pub fn score<S: Sample>(model: &ModelFile, samples: &[S]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| Ok(model.predict(&s.features(&model.featurizer)?)?))
        .collect()
}

/// Metrics at `threshold`, or `None` for an empty slice.
pub fn slice_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Option<MetricsReport> {
    let counts = ConfusionCounts::from_pairs(scores.iter().zip(labels).map(|(&s, &l)| (s >= threshold, l)));
    compute_metrics(counts).ok()
}

fn labels_of<S: Sample>(samples: &[S]) -> Vec<bool> {
    samples.iter().map(S::is_secret).collect()
}

/// Tunes on the validation slice; when it holds no positive the train and
/// validation scores are pooled and the warning flag is set.
fn tune(val: (&[f64], &[bool]), train: (&[f64], &[bool]), target: f64) -> Result<ThresholdChoice> {
    if val.1.iter().any(|&l| l) {
        return Ok(tune_threshold(val.0, val.1, target)?);
    }
    let scores: Vec<f64> = train.0.iter().chain(val.0).copied().collect();
    let labels: Vec<bool> = train.1.iter().chain(val.1).copied().collect();
    let mut choice = tune_threshold(&scores, &labels, target)?;
    choice.warning = true;
    Ok(choice)
}

/// A trained model with the held-out slice it was measured on.
#[derive(Debug, Clone)]
pub struct Trained<S> {
    pub model: ModelFile,
    pub held_out: Vec<S>,
    pub held_out_metrics: Option<MetricsReport>,
    pub threshold: ThresholdChoice,
    pub loss_curve: Vec<f64>,
}

fn labeled<S: Sample>(samples: &[S]) -> Result<Vec<S>> {
    let labeled: Vec<S> = samples.iter().filter(|s| s.label() != Label::Unlabeled).cloned().collect();
    let pos = labeled.iter().filter(|s| s.is_secret()).count();
    if pos == 0 || pos == labeled.len() {
        bail!(
            "training needs both secret and not_secret labels ({} labeled, {} secret)",
            labeled.len(),
            pos
        );
    }
    Ok(labeled)
}

fn split<S: Sample>(samples: Vec<S>, seed: u64) -> Result<Split<S>> {
    Ok(stratified_split(samples, S::is_secret, DEFAULT_RATIOS, seed)?)
}

fn examples<S: Sample>(samples: &[S], featurizer: &Featurizer) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| Ok(Example::new(s.features(featurizer)?, s.is_secret())))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn finish<S: Sample>(
    parameters: Parameters,
    featurizer: Featurizer,
    split: Split<S>,
    train_scores: Vec<f64>,
    config: &TrainConfig,
    synthetic: usize,
    loss_curve: Vec<f64>,
) -> Result<Trained<S>> {
    let probe = ModelFile::new(parameters.clone(), featurizer.clone(), 0.5, metadata(config, DataSizes::default(), None, false));
    let val_scores = score(&probe, &split.validation)?;
    let test_scores = score(&probe, &split.test)?;
    let train_labels = labels_of(&split.train);
    let val_labels = labels_of(&split.validation);
    let test_labels = labels_of(&split.test);
    let choice = tune(
        (&val_scores, &val_labels),
        (&train_scores, &train_labels),
        config.target_recall,
    )?;
    let validation = slice_metrics(&val_scores, &val_labels, choice.threshold);
    let test = slice_metrics(&test_scores, &test_labels, choice.threshold);
    let sizes = DataSizes {
        train: split.train.len() + synthetic,
        validation: split.validation.len(),
        test: split.test.len(),
        train_positives: train_labels.iter().filter(|&&l| l).count() + synthetic,
        synthetic_positives: synthetic,
    };
    let held_out_metrics = test.clone().or_else(|| validation.clone());
    let model = ModelFile::new(
        parameters,
        featurizer,
        choice.threshold,
        metadata(config, sizes, Some(SplitMetrics { validation, test }), choice.warning),
    );
    let held_out = if !split.test.is_empty() {
        split.test
    } else if !split.validation.is_empty() {
        split.validation
    } else {
        split.train
    };
    Ok(Trained {
        model,
        held_out,
        held_out_metrics,
        threshold: choice,
        loss_curve,
    })
}

fn metadata(config: &TrainConfig, data: DataSizes, metrics: Option<SplitMetrics>, warning: bool) -> TrainingMetadata {
    TrainingMetadata {
        config: config.clone(),
        data,
        metrics,
        threshold_warning: warning,
        trained_at: chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string(),
    }
}

/// Split, fit the code feature spec on the train slice, train logistic
/// regression and tune the threshold on the validation slice.
pub fn train_code(samples: &[CodeSample], config: &TrainConfig) -> Result<Trained<CodeSample>> {
    let split = split(labeled(samples)?, config.seed)?;
    let keyed: Vec<(&str, &str)> = split
        .train
        .iter()
        .map(|s| (s.candidate.as_str(), s.extension.as_str()))
        .collect();
    let spec = CodeFeatureSpec::fit(&keyed).context("fitting code features")?;
    let featurizer = Featurizer::Code(spec);
    let train = examples(&split.train, &featurizer)?;
    let (model, curve) = train_logistic(&train, config)?;
    let train_scores = train
        .iter()
        .map(|e| predict_logistic(&model, &e.features))
        .collect::<Result<Vec<_>, _>>()?;
    finish(Parameters::Logistic(model), featurizer, split, train_scores, config, 0, curve)
}

/// Split the rows, append the synthetic secrets to the train slice, fit
/// TF-IDF on it, boost trees and tune the threshold on the validation slice.
pub fn train_docs(samples: &[DocSample], synthetic: &[Row], config: &TrainConfig) -> Result<Trained<DocSample>> {
    let split = split(labeled(samples)?, config.seed)?;
    let mut train_rows: Vec<Vec<String>> = split.train.iter().map(|s| s.tokens.clone()).collect();
    train_rows.extend(synthetic.iter().map(|r| r.tokens.clone()));
    let tfidf = fit_tfidf(&train_rows).map_err(|e| anyhow!("fitting tf-idf: {e}"))?;
    let featurizer = Featurizer::Docs(tfidf);
    let mut train = examples(&split.train, &featurizer)?;
    let synth_samples: Vec<DocSample> = synthetic
        .iter()
        .map(|r| DocSample {
            id: r.id(),
            tokens: r.tokens.clone(),
            label: Label::Secret,
        })
        .collect();
    train.extend(examples(&synth_samples, &featurizer)?);
    let (model, curve) = train_gbdt(&train, config)?;
    let real = split.train.len();
    let train_scores: Vec<f64> = train[..real]
        .iter()
        .map(|e| predict_gbdt(&model, &e.features))
        .collect();
    finish(Parameters::Gbdt(model), featurizer, split, train_scores, config, synthetic.len(), curve)
}
