//! HTTP review service: finding triage, label capture and retraining.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use secretsift_core::eval::MetricsReport;
use secretsift_core::models::{ModelFile, TrainConfig};
use secretsift_core::scan::{Baseline, DetectorConfig, Finding, Label, LineDetector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::labels::{LabelRecord, LabelStore};
use crate::pipeline::{code_samples, effective_label, recover_candidates, score, slice_metrics, train_code, Sample};

pub const CONTEXT_LINES: usize = 3;
pub const DEFAULT_LIMIT: usize = 50;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub baseline: PathBuf,
    pub labels: PathBuf,
    pub model: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub root: PathBuf,
    pub ui_dir: Option<PathBuf>,
    pub detectors: DetectorConfig,
    pub training: TrainConfig,
}

struct Inner {
    findings: Vec<Finding>,
    index: HashMap<String, usize>,
    store: LabelStore,
    model: Option<ModelFile>,
    scores: HashMap<String, f64>,
    metrics: Option<MetricsReport>,
}

impl Inner {
    fn label_of(&self, f: &Finding) -> Label {
        effective_label(&f.id(), f.label, &self.store)
    }

    fn rescore(&mut self) -> Result<()> {
        self.scores.clear();
        if let Some(model) = &self.model {
            let samples = code_samples(&self.findings, &LabelStore::ephemeral());
            for (s, v) in samples.iter().zip(score(model, &samples)?) {
                self.scores.insert(s.id().to_string(), v);
            }
        }
        Ok(())
    }
}

/// Shared service state. Label appends and retrain installs go through one
/// mutex, so readers always see a consistent snapshot.
#[derive(Clone)]
pub struct ServeState {
    inner: Arc<Mutex<Inner>>,
    root: PathBuf,
    ui_dir: Option<PathBuf>,
    model_out: Option<PathBuf>,
    training: TrainConfig,
}

impl ServeState {
    pub fn open(options: ServeOptions) -> Result<Self> {
        let baseline = Baseline::load(&options.baseline)?;
        let store = LabelStore::open(&options.labels)?;
        let model = match &options.model {
            Some(p) => Some(ModelFile::load(p).with_context(|| format!("loading {}", p.display()))?),
            None => None,
        };
        ServeState::new(baseline, store, model, options)
    }

    pub fn new(baseline: Baseline, store: LabelStore, model: Option<ModelFile>, options: ServeOptions) -> Result<Self> {
        let mut findings: Vec<Finding> = baseline.findings().cloned().collect();
        let missing = recover_candidates(&mut findings, &options.root, &LineDetector::new(&options.detectors));
        if missing > 0 {
            tracing::warn!(missing, "findings without a recoverable candidate are not scored");
        }
        let index = findings.iter().enumerate().map(|(i, f)| (f.id(), i)).collect();
        let mut inner = Inner {
            findings,
            index,
            store,
            metrics: model.as_ref().and_then(|m| m.metadata.metrics.as_ref()).and_then(|m| m.test.clone().or(m.validation.clone())),
            model,
            scores: HashMap::new(),
        };
        inner.rescore()?;
        Ok(ServeState {
            inner: Arc::new(Mutex::new(inner)),
            root: options.root,
            ui_dir: options.ui_dir,
            model_out: options.model_out,
            training: options.training,
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: ServeState) -> Router {
    Router::new()
        .route("/api/findings", get(list_findings))
        .route("/api/labels", post(post_label))
        .route("/api/stats", get(stats))
        .route("/api/retrain", post(retrain))
        .route("/", get(index_html))
        .route("/assets/{*path}", get(asset))
        .with_state(state)
}

pub async fn serve(state: ServeState, addr: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!("review service on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

#[derive(Debug, Deserialize)]
struct FindingsQuery {
    status: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextLine {
    pub line_number: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingView {
    pub finding_id: String,
    pub path: String,
    pub line_number: usize,
    pub context: Vec<ContextLine>,
    pub detector: String,
    pub entropy_bits: f64,
    pub score: Option<f64>,
    pub label: Label,
}

fn context_lines(root: &Path, path: &str, line_number: usize) -> Vec<ContextLine> {
    let Ok(text) = std::fs::read_to_string(root.join(path)) else {
        return Vec::new();
    };
    let first = line_number.saturating_sub(CONTEXT_LINES).max(1);
    text.lines()
        .enumerate()
        .map(|(i, t)| (i + 1, t))
        .skip(first - 1)
        .take_while(|(n, _)| *n <= line_number + CONTEXT_LINES)
        .map(|(line_number, t)| ContextLine {
            line_number,
            text: t.to_string(),
        })
        .collect()
}

async fn list_findings(State(state): State<ServeState>, query: Result<Query<FindingsQuery>, axum::extract::rejection::QueryRejection>) -> Response {
    let Ok(Query(q)) = query else {
        return error(StatusCode::BAD_REQUEST, "offset and limit must be non-negative integers");
    };
    let want: Option<bool> = match q.status.as_deref() {
        None | Some("all") => None,
        Some("pending") => Some(false),
        Some("labeled") => Some(true),
        Some(other) => return error(StatusCode::BAD_REQUEST, format!("unknown status {other:?}")),
    };
    let offset = q.offset.unwrap_or(0);
    let limit = q.limit.unwrap_or(DEFAULT_LIMIT);
    let inner = state.lock();
    let mut rows: Vec<(&Finding, Label, Option<f64>)> = inner
        .findings
        .iter()
        .map(|f| {
            let id = f.id();
            let score = inner.scores.get(&id).copied().or(f.score);
            (f, inner.label_of(f), score)
        })
        .filter(|(_, label, _)| want.is_none_or(|w| (*label != Label::Unlabeled) == w))
        .collect();
    rows.sort_by(|a, b| match (a.2, b.2) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let total = rows.len();
    let items: Vec<FindingView> = rows
        .into_iter()
        .skip(offset)
        .take(limit)
        .map(|(f, label, score)| FindingView {
            finding_id: f.id(),
            path: f.path.clone(),
            line_number: f.line_number,
            context: context_lines(&state.root, &f.path, f.line_number),
            detector: f.detector.as_str().to_string(),
            entropy_bits: f.entropy_bits,
            score,
            label,
        })
        .collect();
    Json(json!({ "total": total, "offset": offset, "limit": limit, "items": items })).into_response()
}

async fn post_label(State(state): State<ServeState>, body: Bytes) -> Response {
    let Ok(value) = serde_json::from_slice::<Value>(&body) else {
        return error(StatusCode::BAD_REQUEST, "body must be a JSON object");
    };
    let Some(finding_id) = value.get("finding_id").and_then(Value::as_str) else {
        return error(StatusCode::BAD_REQUEST, "finding_id is required");
    };
    let label = match value.get("label").and_then(Value::as_str) {
        Some("secret") => Label::Secret,
        Some("not_secret") => Label::NotSecret,
        _ => return error(StatusCode::BAD_REQUEST, "label must be \"secret\" or \"not_secret\""),
    };
    let annotator = match value.get("annotator") {
        None | Some(Value::Null) => "",
        Some(Value::String(s)) => s.as_str(),
        Some(_) => return error(StatusCode::BAD_REQUEST, "annotator must be a string"),
    };
    let record = match LabelRecord::new(finding_id, label, annotator) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let mut inner = state.lock();
    if !inner.index.contains_key(finding_id) {
        return error(StatusCode::NOT_FOUND, "unknown finding_id");
    }
    if let Err(e) = inner.store.append(record.clone()) {
        tracing::error!("label append failed: {e:#}");
        return error(StatusCode::INTERNAL_SERVER_ERROR, "could not persist the label");
    }
    Json(record).into_response()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub pending: usize,
    pub labeled: usize,
    pub secrets: usize,
    pub not_secrets: usize,
    pub current_metrics: Option<MetricsReport>,
}

async fn stats(State(state): State<ServeState>) -> Json<Stats> {
    let inner = state.lock();
    let mut s = Stats {
        total: inner.findings.len(),
        pending: 0,
        labeled: 0,
        secrets: 0,
        not_secrets: 0,
        current_metrics: inner.metrics.clone(),
    };
    for f in &inner.findings {
        match inner.label_of(f) {
            Label::Secret => s.secrets += 1,
            Label::NotSecret => s.not_secrets += 1,
            Label::Unlabeled => s.pending += 1,
        }
    }
    s.labeled = s.secrets + s.not_secrets;
    Json(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainResponse {
    pub before: Option<MetricsReport>,
    pub after: MetricsReport,
}

async fn retrain(State(state): State<ServeState>) -> Response {
    let (samples, previous) = {
        let inner = state.lock();
        (code_samples(&inner.findings, &inner.store), inner.model.clone())
    };
    let secrets = samples.iter().filter(|s| s.label == Label::Secret).count();
    let negatives = samples.iter().filter(|s| s.label == Label::NotSecret).count();
    if secrets == 0 || negatives == 0 {
        return error(
            StatusCode::CONFLICT,
            format!(
                "retraining needs at least one secret and one not_secret label ({secrets} secret, {negatives} not_secret)"
            ),
        );
    }
    let config = state.training.clone();
    let trained = match tokio::task::spawn_blocking(move || train_code(&samples, &config)).await {
        Ok(Ok(t)) => t,
        Ok(Err(e)) => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("{e:#}")),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let held_labels: Vec<bool> = trained.held_out.iter().map(Sample::is_secret).collect();
    let before = previous.and_then(|m| {
        let scores = score(&m, &trained.held_out).ok()?;
        slice_metrics(&scores, &held_labels, m.threshold)
    });
    let Some(after) = trained.held_out_metrics.clone() else {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "held-out slice is empty");
    };
    if let Some(path) = &state.model_out {
        if let Err(e) = trained.model.save(path) {
            tracing::error!("saving retrained model failed: {e}");
            return error(StatusCode::INTERNAL_SERVER_ERROR, "could not save the retrained model");
        }
    }
    let mut inner = state.lock();
    inner.model = Some(trained.model);
    inner.metrics = Some(after.clone());
    if let Err(e) = inner.rescore() {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}"));
    }
    Json(RetrainResponse { before, after }).into_response()
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json" | "map") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        Some("woff2") => "font/woff2",
        _ => "application/octet-stream",
    }
}

async fn static_file(dir: Option<&Path>, rel: &str) -> Response {
    let Some(dir) = dir else {
        return error(StatusCode::NOT_FOUND, "no UI bundle configured");
    };
    if rel.split('/').any(|part| part == ".." || part.is_empty()) {
        return error(StatusCode::NOT_FOUND, "not found");
    }
    let path = dir.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "not found"),
    }
}

async fn index_html(State(state): State<ServeState>) -> Response {
    static_file(state.ui_dir.as_deref(), "index.html").await
}

async fn asset(State(state): State<ServeState>, axum::extract::Path(path): axum::extract::Path<String>) -> Response {
    static_file(state.ui_dir.as_deref(), &format!("assets/{path}")).await
}
