//! Seeded fixture generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secretsift_core::synth::{default_catalog, parse_pattern, sample, DEFAULT_MAX_REPEAT};
use secretsift_core::text::Page;

pub const EXTENSIONS: [&str; 6] = ["py", "java", "ini", "yaml", "properties", "sh"];

pub const KEYS: [&str; 8] = [
    "password",
    "db_password",
    "api_key",
    "auth_token",
    "client_secret",
    "admin_passwd",
    "service_token",
    "apikey",
];

const WORDS: [&str; 48] = [
    "see", "vault", "docs", "ask", "ops", "team", "rotate", "quarterly", "reset", "via", "portal", "stored", "in",
    "keychain", "managed", "by", "platform", "provided", "at", "deploy", "time", "set", "from", "environment",
    "read", "config", "service", "account", "owner", "request", "access", "ticket", "minimum", "length", "twelve",
    "characters", "expires", "after", "ninety", "days", "sso", "only", "disabled", "local", "development", "use",
    "default", "profile",
];

/// Secret values drawn from the default template catalog.
pub struct SecretSampler {
    asts: Vec<secretsift_core::synth::Node>,
    rng: ChaCha8Rng,
    seen: HashSet<String>,
}

impl SecretSampler {
    pub fn new(seed: u64) -> Self {
        SecretSampler {
            asts: default_catalog().iter().map(|t| parse_pattern(&t.pattern).unwrap()).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seen: HashSet::new(),
        }
    }

    /// A fresh value, never repeated within this sampler.
    pub fn next(&mut self) -> String {
        loop {
            let ast = &self.asts[self.rng.gen_range(0..self.asts.len())];
            let s = sample(ast, &mut self.rng, DEFAULT_MAX_REPEAT);
            if self.seen.insert(s.clone()) {
                return s;
            }
        }
    }
}

fn decoy(rng: &mut ChaCha8Rng, sep: &str) -> String {
    let n = rng.gen_range(2..=4);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(sep)
}

/// One assignment line in the idiom of `ext`.
pub fn code_line(ext: &str, key: &str, value: &str) -> String {
    match ext {
        "py" => format!("{key} = \"{value}\""),
        "java" => format!("    private static final String {key} = \"{value}\";"),
        "ini" => format!("{key} = \"{value}\""),
        "yaml" => format!("  {key}: \"{value}\""),
        "properties" => format!("app.{key}={value}"),
        "sh" => format!("export {}=\"{value}\"", key.to_uppercase()),
        other => panic!("no idiom for {other}"),
    }
}

fn filler(ext: &str, i: usize) -> String {
    match ext {
        "py" => format!("timeout_{i} = {i}"),
        "java" => format!("    // step {i}"),
        "ini" | "properties" => format!("# section {i}"),
        "yaml" => format!("  retries_{i}: {i}"),
        "sh" => format!("echo step {i}"),
        _ => String::new(),
    }
}

/// Writes `n_secrets` planted secrets and `n_decoys` benign keyword
/// assignments across a tree under `root`. Returns the planted values.
pub fn plant_code_tree(root: &Path, n_secrets: usize, n_decoys: usize, seed: u64) -> HashSet<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = SecretSampler::new(seed ^ 0x5eed);
    let mut lines: Vec<(bool, String)> = Vec::with_capacity(n_secrets + n_decoys);
    let mut secrets = HashSet::new();
    for _ in 0..n_secrets {
        let s = sampler.next();
        secrets.insert(s.clone());
        lines.push((true, s));
    }
    for _ in 0..n_decoys {
        lines.push((false, String::new()));
    }
    lines.shuffle(&mut rng);
    let per_file = 25;
    for (f, chunk) in lines.chunks(per_file).enumerate() {
        let ext = EXTENSIONS[f % EXTENSIONS.len()];
        let mut body = String::new();
        for (i, (is_secret, value)) in chunk.iter().enumerate() {
            let key = KEYS.choose(&mut rng).unwrap();
            let value = if *is_secret {
                value.clone()
            } else if ext == "properties" {
                decoy(&mut rng, "-")
            } else {
                decoy(&mut rng, " ")
            };
            writeln!(body, "{}", filler(ext, i)).unwrap();
            writeln!(body, "{}", code_line(ext, key, &value)).unwrap();
        }
        let dir = root.join(format!("svc{}", f % 7));
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join(format!("module_{f}.{ext}")), body).unwrap();
    }
    secrets
}

const PROSE: [&str; 40] = [
    "deployment", "checklist", "restart", "the", "service", "after", "upgrading", "cluster", "nodes", "monitor",
    "dashboard", "alerts", "escalate", "to", "on", "call", "engineer", "runbook", "database", "migration",
    "rollback", "plan", "review", "with", "team", "capacity", "planning", "network", "latency", "cache",
    "invalidation", "release", "notes", "customer", "impact", "incident", "postmortem", "backup", "schedule", "owner",
];

const MENTIONS: [&str; 6] = [
    "Reset your password through the self service portal",
    "Rotate the api_key every quarter and update the runbook",
    "Tokens expire after ninety days",
    "Ask the platform team for a client secret",
    "Never paste a password into chat",
    "The auth token is issued by the identity provider",
];

const PLANT_KEYS: [&str; 6] = ["password", "passwd", "secret", "token", "api_key", "apikey"];

pub struct DocCorpus {
    pub pages: Vec<Page>,
    /// Planted secret values; a row is a secret when its raw text contains one.
    pub secrets: Vec<String>,
}

impl DocCorpus {
    pub fn is_secret_row(&self, raw: &str) -> bool {
        self.secrets.iter().any(|s| raw.contains(s.as_str()))
    }
}

/// `n_pages` pages of `rows_per_page` lines each with `n_secrets` planted
/// credential rows.
pub fn doc_corpus(n_pages: usize, rows_per_page: usize, n_secrets: usize, seed: u64) -> DocCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = SecretSampler::new(seed ^ 0xd0c5);
    let mut slots: Vec<(usize, usize)> = (0..n_secrets)
        .map(|_| (rng.gen_range(0..n_pages), rng.gen_range(1..rows_per_page)))
        .collect();
    slots.sort();
    slots.dedup();
    while slots.len() < n_secrets {
        let s = (rng.gen_range(0..n_pages), rng.gen_range(1..rows_per_page));
        if !slots.contains(&s) {
            slots.push(s);
        }
    }
    let mut secrets = Vec::new();
    let mut pages = Vec::with_capacity(n_pages);
    for p in 0..n_pages {
        let mut html = format!("<h1>Page {p}</h1>");
        for r in 1..rows_per_page {
            let line = if slots.contains(&(p, r)) {
                let s = sampler.next();
                let key = PLANT_KEYS.choose(&mut rng).unwrap();
                let line = match rng.gen_range(0..3) {
                    0 => format!("{key} = {s}"),
                    1 => format!("{key}: {s}"),
                    _ => format!("staging {key} {s}"),
                };
                secrets.push(s);
                line
            } else if rng.gen_bool(0.03) {
                MENTIONS.choose(&mut rng).unwrap().to_string()
            } else {
                let n = rng.gen_range(4..10);
                let mut words: Vec<&str> = (0..n).map(|_| *PROSE.choose(&mut rng).unwrap()).collect();
                if rng.gen_bool(0.2) {
                    words.push("42");
                }
                words.join(" ")
            };
            write!(html, "<p>{line}</p>").unwrap();
        }
        pages.push(Page {
            id: format!("{}", 10_000 + p),
            title: format!("Page {p}"),
            html,
            space: Some("ENG".into()),
        });
    }
    DocCorpus { pages, secrets }
}

pub mod api {
    use std::collections::HashMap;
    use std::path::Path;

    use axum::body::Body;
    use axum::http::{Request, StatusCode};
    use axum::Router;
    use http_body_util::BodyExt;
    use secretsift::labels::LabelStore;
    use secretsift::server::{router, ServeOptions, ServeState};
    use secretsift_core::models::TrainConfig;
    use secretsift_core::scan::{scan_tree, DetectorConfig, Label};
    use serde_json::{json, Value};
    use tower::ServiceExt;

    pub async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if body.is_some() {
            req = req.header("content-type", "application/json");
        }
        let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
        let res = app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes();
        let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, value)
    }

    pub struct Fixture {
        pub app: Router,
        pub labels: std::path::PathBuf,
        /// finding id -> ground truth
        pub truth: HashMap<String, bool>,
    }

    /// Plants a small tree under `dir`, scans it and serves the baseline
    /// with no UI bundle.
    pub fn fixture(dir: &Path, model_out: Option<std::path::PathBuf>) -> Fixture {
        let root = dir.join("repo");
        let secrets = super::plant_code_tree(&root, 12, 12, 3);
        let out = scan_tree(&root, &DetectorConfig::default()).unwrap();
        let truth = out
            .baseline
            .findings()
            .map(|f| (f.id(), secrets.contains(f.candidate.as_deref().unwrap())))
            .collect();
        let baseline = dir.join("baseline.json");
        out.baseline.save(&baseline, false).unwrap();
        let labels = dir.join("labels.jsonl");
        let state = ServeState::open(ServeOptions {
            baseline,
            labels: labels.clone(),
            model: None,
            model_out,
            root,
            ui_dir: None,
            detectors: DetectorConfig::default(),
            training: TrainConfig::default(),
        })
        .unwrap();
        Fixture {
            app: router(state),
            labels,
            truth,
        }
    }

    fn label_body(id: &str, label: &str) -> Option<String> {
        Some(json!({ "finding_id": id, "label": label, "annotator": "qa" }).to_string())
    }

    macro_rules! ensure {
        ($cond:expr, $($msg:tt)+) => {
            if !$cond {
                return Err(format!($($msg)+));
            }
        };
    }

    /// The endpoint examples: label append, last-write-wins, 400/404/409,
    /// retrain before/after, no UI bundle, and log replay.
    pub async fn review_api_contract() -> Result<(), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let fx = fixture(dir.path(), None);
        let app = &fx.app;
        let total = fx.truth.len();

        let (s, stats) = call(app, "GET", "/api/stats", None).await;
        ensure!(s == StatusCode::OK, "stats status {s}");
        ensure!(stats["pending"] == total && stats["labeled"] == 0, "initial stats {stats}");
        ensure!(stats["current_metrics"].is_null(), "metrics before any model {stats}");

        let (s, page) = call(app, "GET", "/api/findings?status=pending&offset=0&limit=5", None).await;
        ensure!(s == StatusCode::OK, "findings status {s}");
        ensure!(page["total"] == total, "findings total {}", page["total"]);
        let items = page["items"].as_array().ok_or("items missing")?;
        ensure!(items.len() == 5, "limit not applied: {}", items.len());
        for item in items {
            let line = item["line_number"].as_u64().unwrap();
            let ctx: Vec<u64> = item["context"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| c["line_number"].as_u64().unwrap())
                .collect();
            ensure!(ctx.contains(&line), "context misses the finding line");
            ensure!(ctx.windows(2).all(|w| w[1] == w[0] + 1), "context not ordered");
            ensure!(ctx.iter().all(|&n| n + 3 >= line && n <= line + 3), "context wider than 3 lines");
            ensure!(item["label"] == "unlabeled", "pending item has a label");
        }
        let first = items[0]["finding_id"].as_str().unwrap().to_string();

        let (s, _) = call(app, "POST", "/api/labels", label_body(&first, "secret")).await;
        ensure!(s == StatusCode::OK, "valid label status {s}");
        let (_, stats) = call(app, "GET", "/api/stats", None).await;
        ensure!(stats["labeled"] == 1 && stats["pending"] == total - 1, "labeled count after POST {stats}");

        let (s, _) = call(app, "POST", "/api/labels", label_body(&"f".repeat(64), "secret")).await;
        ensure!(s == StatusCode::NOT_FOUND, "unknown finding_id status {s}");
        let (s, _) = call(app, "POST", "/api/labels", label_body(&first, "maybe")).await;
        ensure!(s == StatusCode::BAD_REQUEST, "invalid label status {s}");
        let (s, _) = call(app, "POST", "/api/labels", label_body("not-a-hash", "secret")).await;
        ensure!(s == StatusCode::BAD_REQUEST, "malformed finding_id status {s}");
        let (s, _) = call(app, "POST", "/api/labels", Some("{".into())).await;
        ensure!(s == StatusCode::BAD_REQUEST, "malformed body status {s}");
        let (s, _) = call(app, "GET", "/api/findings?status=bogus", None).await;
        ensure!(s == StatusCode::BAD_REQUEST, "bad status filter {s}");

        let (s, _) = call(app, "POST", "/api/labels", label_body(&first, "not_secret")).await;
        ensure!(s == StatusCode::OK, "relabel status {s}");
        let (_, labeled) = call(app, "GET", "/api/findings?status=labeled", None).await;
        let items = labeled["items"].as_array().unwrap();
        ensure!(items.len() == 1, "labeled items {}", items.len());
        ensure!(items[0]["finding_id"] == first.as_str(), "wrong labeled item");
        ensure!(items[0]["label"] == "not_secret", "last write did not win: {}", items[0]["label"]);

        let (s, body) = call(app, "POST", "/api/retrain", None).await;
        ensure!(s == StatusCode::CONFLICT, "single-class retrain status {s}");
        ensure!(body["error"].as_str().is_some_and(|m| m.contains("secret")), "409 without guidance {body}");

        for (id, &secret) in &fx.truth {
            let (s, _) = call(app, "POST", "/api/labels", label_body(id, if secret { "secret" } else { "not_secret" })).await;
            ensure!(s == StatusCode::OK, "bulk label status {s}");
        }
        let (_, stats) = call(app, "GET", "/api/stats", None).await;
        ensure!(stats["pending"] == 0 && stats["labeled"] == total, "stats after labeling {stats}");

        let (s, first_retrain) = call(app, "POST", "/api/retrain", None).await;
        ensure!(s == StatusCode::OK, "retrain status {s}: {first_retrain}");
        ensure!(first_retrain["before"].is_null(), "before should be null without a prior model");
        ensure!(first_retrain["after"]["recall"].is_number(), "after metrics missing {first_retrain}");
        let (s, second) = call(app, "POST", "/api/retrain", None).await;
        ensure!(s == StatusCode::OK, "second retrain status {s}");
        ensure!(second["before"]["recall"].is_number(), "before metrics missing on second retrain");
        let (_, stats) = call(app, "GET", "/api/stats", None).await;
        ensure!(stats["current_metrics"] == second["after"], "stats do not show the new metrics");
        let (_, scored) = call(app, "GET", "/api/findings?limit=1000", None).await;
        let scores: Vec<f64> = scored["items"]
            .as_array()
            .unwrap()
            .iter()
            .filter_map(|i| i["score"].as_f64())
            .collect();
        ensure!(scores.len() == total, "not every finding is scored after retrain");
        ensure!(scores.windows(2).all(|w| w[0] >= w[1]), "findings not sorted by score");

        for uri in ["/", "/assets/index.js"] {
            let (s, _) = call(app, "GET", uri, None).await;
            ensure!(s == StatusCode::NOT_FOUND, "{uri} without a UI bundle: {s}");
        }

        let replayed = LabelStore::open(&fx.labels).map_err(|e| e.to_string())?;
        let served: HashMap<String, Label> = scored["items"]
            .as_array()
            .unwrap()
            .iter()
            .map(|i| {
                let label = serde_json::from_value(i["label"].clone()).unwrap();
                (i["finding_id"].as_str().unwrap().to_string(), label)
            })
            .collect();
        ensure!(replayed.latest() == &served, "replaying the label log does not reproduce server state");
        Ok(())
    }
}
