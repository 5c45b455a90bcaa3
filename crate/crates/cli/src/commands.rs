//! Argument definitions and the command implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use secretsift_core::eval::{evaluate_pipeline, EvalItem};
use secretsift_core::ingest::{fetch_pages, load_corpus, load_fixture_dir, persist_corpus, ConnectorConfig};
use secretsift_core::models::{Featurizer, ModelFile, TrainConfig};
use secretsift_core::remediate::{apply_patches, emit_vault_manifest, manifest_jsonl, plan_remediation, Catalog};
use secretsift_core::scan::{diff_baselines, scan_tree, Baseline, DetectorConfig, Label, LineDetector};
use secretsift_core::synth::{default_catalog, generate_synthetic_secrets, parse_catalog};
use secretsift_core::text::{page_to_rows, Page, Row, Stopwords};
use serde::{Deserialize, Serialize};

use crate::labels::LabelStore;
use crate::pipeline::{self, code_samples, doc_samples, recover_candidates, score, Sample};
use crate::server;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FINDINGS: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "secretsift", version, about = "Find, triage and remediate hard-coded secrets")]
pub struct Cli {
    /// JSON file with optional `detectors`, `training` and `connector` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a tree and write a baseline.
    Scan(ScanArgs),
    /// Train a code or document classifier.
    Train(TrainArgs),
    /// Compare a model with the flag-everything heuristic on labeled data.
    Eval(EvalArgs),
    /// Rewrite confirmed secrets into vault lookups.
    Remediate(RemediateArgs),
    /// Fetch pages from a document platform or a fixture directory.
    Ingest(IngestArgs),
    /// Serve the review API and UI.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    pub root: PathBuf,
    #[arg(long, default_value = "baseline.json")]
    pub out: PathBuf,
    /// Also write a sidecar baseline that includes plaintext candidates.
    #[arg(long)]
    pub keep_plaintext: bool,
    /// Exit with status 2 when anything is found.
    #[arg(long)]
    pub fail_on_detect: bool,
    /// Earlier baseline whose labels carry over to unchanged findings.
    #[arg(long)]
    pub previous: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Code,
    Docs,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Baseline (code) or pages/rows JSONL or HTML fixture directory (docs).
    #[arg(long)]
    pub data: PathBuf,
    /// Label log; its labels override those stored with the data.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Tree the baseline was scanned from, used to recover candidates.
    #[arg(long, default_value = ".")]
    pub root: PathBuf,
    /// Treat unlabeled document rows as not_secret.
    #[arg(long)]
    pub assume_negative: bool,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[command(flatten)]
    pub data: DataArgs,
    /// Synthetic secrets added to the document train slice.
    #[arg(long, default_value_t = 0)]
    pub synth: usize,
    /// Template catalog for synthetic secrets.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub target_recall: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Defaults to `<model>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Defaults to `<model>.predictions.jsonl`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RemediateArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Recipe catalog JSON; the built-in catalog otherwise.
    #[arg(long)]
    pub recipes: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub root: PathBuf,
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long, default_value = "vault_manifest.jsonl")]
    pub manifest: PathBuf,
    #[arg(long, default_value = "remediation_report.json")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, default_value = "pages.jsonl")]
    pub out: PathBuf,
    /// Also write normalized rows here.
    #[arg(long)]
    pub rows: Option<PathBuf>,
    #[arg(long, conflicts_with = "base_url")]
    pub fixture_dir: Option<PathBuf>,
    #[arg(long)]
    pub base_url: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    pub token_env: Option<String>,
    #[arg(long)]
    pub page_size: Option<usize>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub timeout: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long, default_value = "labels.jsonl")]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Where retrained models are written; kept in memory otherwise.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub root: PathBuf,
    /// Built UI bundle; `/` and `/assets/*` return 404 without it.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub detectors: DetectorConfig,
    pub training: TrainConfig,
    pub connector: ConnectorConfig,
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(AppConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: AppConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.detectors.validate()?;
        config.training.validate()?;
        Ok(config)
    }
}

/// `baseline.json` -> `baseline.plaintext.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.plaintext.json"))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn run(cli: Cli) -> Result<i32> {
    let config = AppConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Scan(a) => cmd_scan(&a, &config),
        Command::Train(a) => cmd_train(&a, &config),
        Command::Eval(a) => cmd_eval(&a, &config),
        Command::Remediate(a) => cmd_remediate(&a, &config),
        Command::Ingest(a) => cmd_ingest(&a, &config),
        Command::Serve(a) => cmd_serve(a, config),
    }
}

fn cmd_scan(args: &ScanArgs, config: &AppConfig) -> Result<i32> {
    let out = scan_tree(&args.root, &config.detectors)?;
    let mut baseline = out.baseline;
    if let Some(prev) = &args.previous {
        let diff = diff_baselines(&Baseline::load(prev)?, &baseline)?;
        eprintln!("{} added, {} removed since {}", diff.added.len(), diff.removed.len(), prev.display());
        baseline = diff.merged;
    }
    baseline.save(&args.out, false)?;
    if args.keep_plaintext {
        baseline.save(&sidecar_path(&args.out), true)?;
    }
    println!(
        "{} findings in {} files ({} binary skipped, {} warnings) -> {}",
        baseline.len(),
        out.stats.files_scanned,
        out.stats.binary_skipped,
        out.stats.warnings,
        args.out.display()
    );
    if args.fail_on_detect && !baseline.is_empty() {
        return Ok(EXIT_FINDINGS);
    }
    Ok(EXIT_OK)
}

fn open_labels(path: Option<&Path>) -> Result<LabelStore> {
    match path {
        Some(p) => LabelStore::open(p),
        None => Ok(LabelStore::ephemeral()),
    }
}

/// Baseline findings with plaintext candidates, from the file itself, its
/// sidecar, or re-detection under `root`.
pub fn load_code_findings(data: &Path, root: &Path, detectors: &DetectorConfig) -> Result<Vec<secretsift_core::scan::Finding>> {
    let mut baseline = Baseline::load(data)?;
    let sidecar = sidecar_path(data);
    if baseline.findings().any(|f| f.candidate.is_none()) && sidecar.exists() {
        let plain = Baseline::load(&sidecar)?;
        let by_key: std::collections::HashMap<String, String> = plain
            .findings()
            .filter_map(|f| Some((f.id(), f.candidate.clone()?)))
            .collect();
        for f in baseline.findings_mut() {
            if f.candidate.is_none() {
                f.candidate = by_key.get(&f.id()).cloned();
            }
        }
    }
    let mut findings: Vec<_> = baseline.findings().cloned().collect();
    let missing = recover_candidates(&mut findings, root, &LineDetector::new(detectors));
    if missing > 0 {
        eprintln!(
            "warning: {missing} finding(s) have no recoverable candidate; rescan with --keep-plaintext or pass --root"
        );
    }
    Ok(findings)
}

pub fn load_rows(path: &Path, stopwords: &Stopwords) -> Result<Vec<Row>> {
    let pages: Vec<Page> = if path.is_dir() {
        load_fixture_dir(path)?
    } else {
        match load_corpus::<Row>(path) {
            Ok(rows) => return Ok(rows),
            Err(_) => load_corpus::<Page>(path).with_context(|| format!("{} holds neither rows nor pages", path.display()))?,
        }
    };
    Ok(pages.iter().flat_map(|p| page_to_rows(p, stopwords)).collect())
}

fn stopwords(path: Option<&Path>) -> Result<Stopwords> {
    match path {
        Some(p) => Stopwords::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(Stopwords::default()),
    }
}

fn cmd_train(args: &TrainArgs, config: &AppConfig) -> Result<i32> {
    let mut train_config = config.training.clone();
    if let Some(t) = args.target_recall {
        train_config.target_recall = t;
    }
    if let Some(s) = args.seed {
        train_config.seed = s;
    }
    train_config.validate()?;
    let store = open_labels(args.data.labels.as_deref())?;
    let (model, held_out) = match args.kind {
        Kind::Code => {
            let findings = load_code_findings(&args.data.data, &args.data.root, &config.detectors)?;
            let t = pipeline::train_code(&code_samples(&findings, &store), &train_config)?;
            (t.model, t.held_out_metrics)
        }
        Kind::Docs => {
            let sw = stopwords(args.data.stopwords.as_deref())?;
            let rows = load_rows(&args.data.data, &sw)?;
            let templates = match &args.templates {
                Some(p) => parse_catalog(&std::fs::read_to_string(p)?)?,
                None => default_catalog(),
            };
            let synthetic = generate_synthetic_secrets(&templates, args.synth, train_config.seed, &sw)?;
            let samples = doc_samples(&rows, &store, args.data.assume_negative);
            let t = pipeline::train_docs(&samples, &synthetic, &train_config)?;
            (t.model, t.held_out_metrics)
        }
    };
    model.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let d = &model.metadata.data;
    println!(
        "{} model -> {} (train {}, validation {}, test {}, synthetic {})",
        model.kind,
        args.out.display(),
        d.train,
        d.validation,
        d.test,
        d.synthetic_positives
    );
    println!("threshold {:.4}", model.threshold);
    if model.metadata.threshold_warning {
        eprintln!("warning: target recall is only reachable by flagging everything; threshold set to 0");
    }
    if let Some(m) = held_out {
        print!("{}", secretsift_core::eval::render_table(&[("Model (held out)", &m)]));
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EvalReportFile<'a> {
    model: &'a str,
    #[serde(flatten)]
    report: &'a secretsift_core::eval::EvaluationReport,
}

fn eval_items<S: Sample>(model: &ModelFile, samples: &[S]) -> Result<Vec<EvalItem>> {
    let scores = score(model, samples)?;
    Ok(samples
        .iter()
        .zip(scores)
        .map(|(s, score)| EvalItem {
            id: s.id().to_string(),
            score,
            gold: s.label(),
        })
        .collect())
}

fn cmd_eval(args: &EvalArgs, config: &AppConfig) -> Result<i32> {
    let model = ModelFile::load(&args.model)?;
    let store = open_labels(args.data.labels.as_deref())?;
    let items = match &model.featurizer {
        Featurizer::Code(_) => {
            let findings = load_code_findings(&args.data.data, &args.data.root, &config.detectors)?;
            let samples = code_samples(&findings, &store);
            if samples.len() < findings.len() {
                bail!("{} finding(s) lack a plaintext candidate", findings.len() - samples.len());
            }
            eval_items(&model, &samples)?
        }
        Featurizer::Docs(_) => {
            let sw = stopwords(args.data.stopwords.as_deref())?;
            let rows = load_rows(&args.data.data, &sw)?;
            eval_items(&model, &doc_samples(&rows, &store, args.data.assume_negative))?
        }
    };
    let report = evaluate_pipeline(&items, model.threshold)?;
    print!("{}", report.table());
    let report_path = args.report.clone().unwrap_or_else(|| with_suffix(&args.model, ".report.json"));
    let preds_path = args
        .predictions
        .clone()
        .unwrap_or_else(|| with_suffix(&args.model, ".predictions.jsonl"));
    let file = EvalReportFile {
        model: &model.kind,
        report: &report,
    };
    std::fs::write(&report_path, serde_json::to_string_pretty(&file)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    std::fs::write(&preds_path, report.predictions_jsonl())
        .with_context(|| format!("writing {}", preds_path.display()))?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct RemediationReportFile {
    #[serde(flatten)]
    report: secretsift_core::remediate::RemediationReport,
    planned: usize,
    unremediated: Vec<String>,
    already_remediated: usize,
}

fn cmd_remediate(args: &RemediateArgs, config: &AppConfig) -> Result<i32> {
    let baseline = Baseline::load(&args.baseline)?;
    let store = open_labels(args.labels.as_deref())?;
    let secrets: Vec<_> = baseline
        .findings()
        .filter(|f| pipeline::effective_label(&f.id(), f.label, &store) == Label::Secret)
        .cloned()
        .collect();
    let catalog = match &args.recipes {
        Some(p) => Catalog::load(p)?,
        None => Catalog::default(),
    };
    let plan = plan_remediation(&secrets, &catalog, &args.root, &config.detectors)?;
    let (report, diff) = apply_patches(&args.root, &plan.patches, args.dry_run)?;
    print!("{diff}");
    eprintln!(
        "{} patch(es) {}, {} skipped, {} unremediated, {} already remediated",
        plan.patches.len(),
        if args.dry_run { "planned" } else { "applied" },
        report.skipped,
        plan.unremediated.len(),
        plan.already_remediated.len()
    );
    if !args.dry_run {
        std::fs::write(&args.manifest, manifest_jsonl(&emit_vault_manifest(&plan.patches)))
            .with_context(|| format!("writing {}", args.manifest.display()))?;
        let file = RemediationReportFile {
            planned: plan.patches.len(),
            unremediated: plan.unremediated.iter().map(|f| f.id()).collect(),
            already_remediated: plan.already_remediated.len(),
            report,
        };
        std::fs::write(&args.report, serde_json::to_string_pretty(&file)? + "\n")
            .with_context(|| format!("writing {}", args.report.display()))?;
    }
    Ok(EXIT_OK)
}

fn cmd_ingest(args: &IngestArgs, config: &AppConfig) -> Result<i32> {
    let pages: Vec<Page> = match (&args.fixture_dir, &args.base_url) {
        (Some(dir), _) => load_fixture_dir(dir)?,
        (None, Some(url)) => {
            let mut c = config.connector.clone();
            c.base_url = url.clone();
            if args.token_env.is_some() {
                c.auth_token_env = args.token_env.clone();
            }
            c.page_size = args.page_size.unwrap_or(c.page_size);
            c.max_retries = args.max_retries.unwrap_or(c.max_retries);
            c.timeout_secs = args.timeout.unwrap_or(c.timeout_secs);
            if c.page_size == 0 {
                bail!("--page-size must be at least 1");
            }
            fetch_pages(&c)?.collect::<Result<_, _>>()?
        }
        (None, None) => bail!("pass --fixture-dir or --base-url"),
    };
    persist_corpus(&pages, &args.out)?;
    println!("{} pages -> {}", pages.len(), args.out.display());
    if let Some(rows_path) = &args.rows {
        let sw = Stopwords::default();
        let rows: Vec<Row> = pages.iter().flat_map(|p| page_to_rows(p, &sw)).collect();
        persist_corpus(&rows, rows_path)?;
        println!("{} rows -> {}", rows.len(), rows_path.display());
    }
    Ok(EXIT_OK)
}

fn cmd_serve(args: ServeArgs, config: AppConfig) -> Result<i32> {
    let state = server::ServeState::open(server::ServeOptions {
        baseline: args.baseline,
        labels: args.labels,
        model: args.model,
        model_out: args.model_out,
        root: args.root,
        ui_dir: args.ui_dir,
        detectors: config.detectors,
        training: config.training,
    })?;
    let addr = format!("{}:{}", args.bind, args.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(server::serve(state, &addr))?;
    Ok(EXIT_OK)
}
