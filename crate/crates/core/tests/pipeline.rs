use std::fs;

use secretsift_core::eval::{evaluate_pipeline, EvalItem};
use secretsift_core::features::{assemble_code_features, extension_of, CodeFeatureSpec};
use secretsift_core::models::{
    train_logistic, tune_threshold, DataSizes, Example, Featurizer, ModelFile, Parameters, TrainConfig,
    TrainingMetadata,
};
use secretsift_core::scan::{scan_tree, Baseline, DetectorConfig, Label};

#[test]
fn scan_label_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::new();
    for i in 0..20 {
        body.push_str(&format!("password = \"Zx{i}q8Lw3Rt7Vb2Nm\"\n"));
        body.push_str(&format!("password = \"example{i}\"\n"));
    }
    fs::write(dir.path().join("settings.py"), &body).unwrap();

    let out = scan_tree(dir.path(), &DetectorConfig::default()).unwrap();
    let sidecar = dir.path().join("baseline.plain.json");
    out.baseline.save(&sidecar, true).unwrap();
    let mut baseline = Baseline::load(&sidecar).unwrap();
    assert_eq!(baseline, out.baseline);
    for f in baseline.findings_mut() {
        let c = f.candidate.as_deref().unwrap();
        f.label = if c.starts_with("example") { Label::NotSecret } else { Label::Secret };
    }
    let findings: Vec<_> = baseline.findings().cloned().collect();
    let keyed: Vec<(String, String)> = findings
        .iter()
        .map(|f| (f.candidate.clone().unwrap(), extension_of(&f.path)))
        .collect();
    let spec = CodeFeatureSpec::fit(&keyed).unwrap();
    let data: Vec<Example> = findings
        .iter()
        .map(|f| Example::new(assemble_code_features(f, &extension_of(&f.path), &spec).unwrap(), f.label == Label::Secret))
        .collect();
    let (model, curve) = train_logistic(&data, &TrainConfig::default()).unwrap();
    assert!(curve.last() < curve.first());

    let file = ModelFile::new(
        Parameters::Logistic(model),
        Featurizer::Code(spec),
        0.5,
        TrainingMetadata {
            config: TrainConfig::default(),
            data: DataSizes { train: data.len(), ..Default::default() },
            metrics: None,
            threshold_warning: false,
            trained_at: "2024-01-01T00:00:00Z".into(),
        },
    );
    let scores: Vec<f64> = data.iter().map(|e| file.predict(&e.features).unwrap()).collect();
    let labels: Vec<bool> = data.iter().map(|e| e.label).collect();
    let choice = tune_threshold(&scores, &labels, 0.99).unwrap();
    let items: Vec<EvalItem> = findings
        .iter()
        .zip(&scores)
        .map(|(f, &s)| EvalItem { id: f.id(), score: s, gold: f.label })
        .collect();
    let report = evaluate_pipeline(&items, choice.threshold).unwrap();
    assert_eq!(report.model.recall, 1.0);
    assert!(report.model.precision > report.heuristic.precision);
}
