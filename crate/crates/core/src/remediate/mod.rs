//! Rewrites confirmed secrets into vault lookups using a catalog of
//! line-level recipes.

mod diff;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use globset::{Glob, GlobMatcher};
use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::features::extension_of;
use crate::scan::{DetectorConfig, Finding, LineDetector};

pub use diff::{file_diff, redact};

const DEFAULT_RECIPES: &str = include_str!("default_recipes.json");

#[derive(Debug, thiserror::Error)]
pub enum RemediationError {
    #[error("recipe {id:?}: {message}")]
    Recipe { id: String, message: String },
    #[error("recipe catalog: {0}")]
    Catalog(#[from] serde_json::Error),
    #[error("{} stale finding(s), rescan first: {}", .0.len(), .0.join(", "))]
    Stale(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A rewrite rule. `match` must capture `var` (the identifier) and `secret`
/// (the value); `replacement` may use `${var}`, `${ref}` and `$$`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "any_path")]
    pub file_glob: String,
    #[serde(default)]
    pub extensions: Vec<String>,
    #[serde(rename = "match")]
    pub pattern: String,
    pub replacement: String,
    #[serde(default)]
    pub priority: i64,
}

fn any_path() -> String {
    "**".into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Lit(String),
    Var,
    Ref,
}

fn parse_template(id: &str, template: &str) -> Result<Vec<Piece>, RemediationError> {
    let err = |message: String| RemediationError::Recipe {
        id: id.to_string(),
        message,
    };
    let mut pieces = Vec::new();
    let mut lit = String::new();
    let mut rest = template;
    while let Some(i) = rest.find('$') {
        lit.push_str(&rest[..i]);
        let after = &rest[i + 1..];
        if let Some(tail) = after.strip_prefix('$') {
            lit.push('$');
            rest = tail;
        } else if let Some(body) = after.strip_prefix('{') {
            let end = body
                .find('}')
                .ok_or_else(|| err("unterminated placeholder".into()))?;
            let piece = match &body[..end] {
                "var" => Piece::Var,
                "ref" => Piece::Ref,
                other => return Err(err(format!("unknown placeholder ${{{other}}}"))),
            };
            if !lit.is_empty() {
                pieces.push(Piece::Lit(std::mem::take(&mut lit)));
            }
            pieces.push(piece);
            rest = &body[end + 1..];
        } else {
            lit.push('$');
            rest = after;
        }
    }
    lit.push_str(rest);
    if !lit.is_empty() {
        pieces.push(Piece::Lit(lit));
    }
    Ok(pieces)
}

fn render(pieces: &[Piece], var: &str, vault_ref: &str) -> String {
    pieces
        .iter()
        .map(|p| match p {
            Piece::Lit(s) => s.as_str(),
            Piece::Var => var,
            Piece::Ref => vault_ref,
        })
        .collect()
}

/// Lowercased identifier with each run of non-alphanumerics replaced by one
/// hyphen.
pub fn vault_ref(var: &str) -> String {
    let mut out = String::new();
    let mut gap = false;
    for c in var.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
            gap = false;
        } else if !gap {
            out.push('-');
            gap = true;
        }
    }
    out
}

#[derive(Debug, Clone)]
struct CompiledRecipe {
    recipe: Recipe,
    glob: GlobMatcher,
    matcher: Regex,
    template: Vec<Piece>,
    /// Matches lines this recipe has already rewritten.
    rendered: Regex,
}

impl CompiledRecipe {
    fn new(recipe: Recipe) -> Result<Self, RemediationError> {
        let err = |message: String| RemediationError::Recipe {
            id: recipe.id.clone(),
            message,
        };
        let matcher = Regex::new(&recipe.pattern).map_err(|e| err(e.to_string()))?;
        for name in ["var", "secret"] {
            if !matcher.capture_names().flatten().any(|n| n == name) {
                return Err(err(format!("match pattern lacks the `{name}` capture")));
            }
        }
        let glob = Glob::new(&recipe.file_glob)
            .map_err(|e| err(e.to_string()))?
            .compile_matcher();
        let template = parse_template(&recipe.id, &recipe.replacement)?;
        let rendered: String = template
            .iter()
            .map(|p| match p {
                Piece::Lit(s) => regex::escape(s),
                Piece::Var => r"[A-Za-z0-9_.\-]+".into(),
                Piece::Ref => r#"[^\s"'(){}]+"#.into(),
            })
            .collect();
        let rendered = Regex::new(&rendered).map_err(|e| err(e.to_string()))?;
        let recipe = Recipe {
            extensions: recipe.extensions.iter().map(|e| e.trim_start_matches('.').to_lowercase()).collect(),
            ..recipe
        };
        Ok(CompiledRecipe {
            recipe,
            glob,
            matcher,
            template,
            rendered,
        })
    }

    fn applies_to(&self, path: &str) -> bool {
        self.glob.is_match(path)
            && (self.recipe.extensions.is_empty()
                || self.recipe.extensions.contains(&extension_of(path)))
    }
}

/// Recipes ordered by descending priority; equal priorities keep catalog
/// order.
#[derive(Debug, Clone)]
pub struct Catalog {
    recipes: Vec<CompiledRecipe>,
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog::from_json(DEFAULT_RECIPES).expect("default catalog is valid")
    }
}

impl Catalog {
    pub fn new(recipes: Vec<Recipe>) -> Result<Self, RemediationError> {
        let mut compiled = recipes
            .into_iter()
            .map(CompiledRecipe::new)
            .collect::<Result<Vec<_>, _>>()?;
        compiled.sort_by_key(|c| std::cmp::Reverse(c.recipe.priority));
        Ok(Catalog { recipes: compiled })
    }

    pub fn from_json(json: &str) -> Result<Self, RemediationError> {
        Catalog::new(serde_json::from_str(json)?)
    }

    pub fn load(path: &Path) -> Result<Self, RemediationError> {
        let json = std::fs::read_to_string(path).map_err(|source| RemediationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Catalog::from_json(&json)
    }

    pub fn recipes(&self) -> impl Iterator<Item = &Recipe> {
        self.recipes.iter().map(|c| &c.recipe)
    }

    fn already_rewritten(&self, path: &str, line: &str) -> bool {
        self.recipes
            .iter()
            .any(|r| r.applies_to(path) && r.rendered.is_match(line))
    }
}

/// Replacement of one line. Patches on the same line chain: each one's
/// `old_line` is the previous one's `new_line`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Patch {
    pub path: String,
    pub line_number: usize,
    #[serde(skip)]
    pub old_line: String,
    pub new_line: String,
    pub recipe_id: String,
    pub vault_ref: String,
    pub candidate_hash: String,
    #[serde(skip)]
    candidate: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RemediationPlan {
    pub patches: Vec<Patch>,
    /// No recipe applies, or every applicable rewrite would still leave a
    /// keyword finding.
    pub unremediated: Vec<Finding>,
    /// The line already holds a recipe's rewrite.
    pub already_remediated: Vec<Finding>,
}

type FileLines = Option<Vec<String>>;

fn read_lines(root: &Path, path: &str) -> FileLines {
    let bytes = std::fs::read(root.join(path)).ok()?;
    let text = String::from_utf8(bytes).ok()?;
    Some(text.lines().map(str::to_string).collect())
}

/// Plans one patch per finding. Findings are re-detected on the current
/// file contents first; any whose candidate is gone from a line that no
/// recipe has rewritten makes the whole plan fail as stale. Callers pass
/// only secret-labeled findings.
pub fn plan_remediation(
    findings: &[Finding],
    catalog: &Catalog,
    root: &Path,
    config: &DetectorConfig,
) -> Result<RemediationPlan, RemediationError> {
    let detector = LineDetector::new(config);
    let mut ordered: Vec<&Finding> = findings.iter().collect();
    ordered.sort_by(|a, b| {
        (&a.path, a.line_number, a.detector, &a.candidate_hash)
            .cmp(&(&b.path, b.line_number, b.detector, &b.candidate_hash))
    });
    let mut files: BTreeMap<&str, FileLines> = BTreeMap::new();
    let mut working: BTreeMap<(&str, usize), String> = BTreeMap::new();
    let mut plan = RemediationPlan::default();
    let mut stale = Vec::new();

    for f in ordered {
        let lines = files
            .entry(f.path.as_str())
            .or_insert_with(|| read_lines(root, &f.path));
        let Some(original) = lines
            .as_ref()
            .and_then(|l| l.get(f.line_number.wrapping_sub(1)))
        else {
            stale.push(format!("{}:{} ({})", f.path, f.line_number, f.detector));
            continue;
        };
        let candidate = detector
            .findings(&f.path, f.line_number, original)
            .into_iter()
            .find(|d| d.detector == f.detector && d.candidate_hash == f.candidate_hash)
            .and_then(|d| d.candidate);
        let Some(candidate) = candidate else {
            if catalog.already_rewritten(&f.path, original) {
                plan.already_remediated.push(f.clone());
            } else {
                stale.push(format!("{}:{} ({})", f.path, f.line_number, f.detector));
            }
            continue;
        };
        let key = (f.path.as_str(), f.line_number);
        let current = working.get(&key).cloned().unwrap_or_else(|| original.clone());
        if !current.contains(&candidate) {
            // an earlier patch on this line already rewrote the value
            plan.already_remediated.push(f.clone());
            continue;
        }
        match rewrite(catalog, &detector, &f.path, &current, &candidate) {
            Some((recipe_id, vault_ref, new_line)) => {
                working.insert(key, new_line.clone());
                plan.patches.push(Patch {
                    path: f.path.clone(),
                    line_number: f.line_number,
                    old_line: current,
                    new_line,
                    recipe_id,
                    vault_ref,
                    candidate_hash: f.candidate_hash.clone(),
                    candidate,
                });
            }
            None => plan.unremediated.push(f.clone()),
        }
    }
    if !stale.is_empty() {
        return Err(RemediationError::Stale(stale));
    }
    Ok(plan)
}

/// First recipe match whose `secret` capture contains the candidate and
/// whose rewrite removes it without introducing a keyword finding.
fn rewrite(
    catalog: &Catalog,
    detector: &LineDetector,
    path: &str,
    line: &str,
    candidate: &str,
) -> Option<(String, String, String)> {
    for r in catalog.recipes.iter().filter(|r| r.applies_to(path)) {
        for caps in r.matcher.captures_iter(line) {
            if !caps["secret"].contains(candidate) {
                continue;
            }
            let whole = caps.get(0).expect("group 0 always matches");
            let vref = vault_ref(&caps["var"]);
            let replacement = render(&r.template, &caps["var"], &vref);
            let new_line = format!("{}{}{}", &line[..whole.start()], replacement, &line[whole.end()..]);
            let span = whole.start()..whole.start() + replacement.len();
            let compliant = !new_line.contains(candidate)
                && detector
                    .keyword(&new_line)
                    .iter()
                    .all(|d| d.span.end <= span.start || d.span.start >= span.end);
            if compliant {
                return Some((r.recipe.id.clone(), vref, new_line));
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub path: String,
    pub line_number: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemediationReport {
    pub dry_run: bool,
    pub applied: usize,
    /// Patches whose line already holds the rewrite, plus conflicts.
    pub skipped: usize,
    pub files_changed: usize,
    pub conflicts: Vec<Conflict>,
}

struct Segment<'a> {
    text: &'a str,
    ending: &'a str,
}

fn segments(content: &str) -> Vec<Segment<'_>> {
    content
        .split_inclusive('\n')
        .map(|s| {
            let body = s.strip_suffix('\n').unwrap_or(s);
            match body.strip_suffix('\r') {
                Some(t) if s.ends_with('\n') => Segment { text: t, ending: &s[t.len()..] },
                _ => Segment { text: body, ending: &s[body.len()..] },
            }
        })
        .collect()
}

fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    if let Ok(meta) = std::fs::metadata(path) {
        tmp.as_file().set_permissions(meta.permissions())?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Applies the plan, or only renders its diff when `dry_run` is set.
/// Returns the report and a unified diff whose removed and context lines
/// have every planned candidate redacted.
pub fn apply_patches(
    root: &Path,
    patches: &[Patch],
    dry_run: bool,
) -> Result<(RemediationReport, String), RemediationError> {
    apply_with(root, patches, dry_run, &mut atomic_write)
}

pub(crate) fn apply_with(
    root: &Path,
    patches: &[Patch],
    dry_run: bool,
    write: &mut dyn FnMut(&Path, &[u8]) -> std::io::Result<()>,
) -> Result<(RemediationReport, String), RemediationError> {
    let mut by_file: BTreeMap<&str, BTreeMap<usize, Vec<&Patch>>> = BTreeMap::new();
    for p in patches {
        by_file
            .entry(&p.path)
            .or_default()
            .entry(p.line_number)
            .or_default()
            .push(p);
    }
    let secrets: Vec<&str> = patches.iter().map(|p| p.candidate.as_str()).collect();
    let mut report = RemediationReport {
        dry_run,
        ..Default::default()
    };
    let mut diff_text = String::new();
    let mut writes: Vec<(PathBuf, String, String)> = Vec::new();

    for (path, lines) in by_file {
        let full = root.join(path);
        let io_err = |source| RemediationError::Io {
            path: path.to_string(),
            source,
        };
        let bytes = std::fs::read(&full).map_err(io_err)?;
        let original = String::from_utf8(bytes)
            .map_err(|e| io_err(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
        let segs = segments(&original);
        let mut new_text: Vec<String> = segs.iter().map(|s| s.text.to_string()).collect();
        let conflict = |line: usize, reason: &str, n: usize, report: &mut RemediationReport| {
            report.skipped += n;
            report.conflicts.push(Conflict {
                path: path.to_string(),
                line_number: line,
                reason: reason.to_string(),
            });
        };
        for (line, chain) in lines {
            let Some(current) = line.checked_sub(1).and_then(|i| segs.get(i)).map(|s| s.text) else {
                conflict(line, "line no longer exists", chain.len(), &mut report);
                continue;
            };
            if current == chain[0].old_line {
                let mut working = current.to_string();
                let mut ok = true;
                for p in &chain {
                    if working != p.old_line {
                        ok = false;
                        break;
                    }
                    working = p.new_line.clone();
                }
                if ok {
                    new_text[line - 1] = working;
                    report.applied += chain.len();
                } else {
                    conflict(line, "patch chain is inconsistent", chain.len(), &mut report);
                }
            } else if current == chain[chain.len() - 1].new_line {
                report.skipped += chain.len();
            } else {
                conflict(line, "line changed since planning", chain.len(), &mut report);
            }
        }
        let old_lines: Vec<&str> = segs.iter().map(|s| s.text).collect();
        let new_lines: Vec<&str> = new_text.iter().map(String::as_str).collect();
        if old_lines == new_lines {
            continue;
        }
        report.files_changed += 1;
        let final_newline = segs.last().is_none_or(|s| !s.ending.is_empty());
        diff_text.push_str(&file_diff(path, &old_lines, &new_lines, final_newline, &secrets));
        let rebuilt: String = new_text
            .iter()
            .zip(&segs)
            .map(|(t, s)| format!("{t}{}", s.ending))
            .collect();
        writes.push((full, rebuilt, original));
    }

    if !dry_run {
        for i in 0..writes.len() {
            let (path, new, _) = &writes[i];
            if let Err(source) = write(path, new.as_bytes()) {
                for (done, _, old) in &writes[..i] {
                    if let Err(e) = write(done, old.as_bytes()) {
                        warn!("rollback of {} failed: {e}", done.display());
                    }
                }
                return Err(RemediationError::Io {
                    path: path.display().to_string(),
                    source,
                });
            }
        }
    }
    Ok((report, diff_text))
}

/// One vault handoff row per patch; holds no plaintext.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub candidate_hash: String,
    pub line_number: usize,
    pub path: String,
    pub recipe_id: String,
    pub vault_ref: String,
}

pub fn emit_vault_manifest(patches: &[Patch]) -> Vec<ManifestRow> {
    patches
        .iter()
        .map(|p| ManifestRow {
            candidate_hash: p.candidate_hash.clone(),
            line_number: p.line_number,
            path: p.path.clone(),
            recipe_id: p.recipe_id.clone(),
            vault_ref: p.vault_ref.clone(),
        })
        .collect()
}

pub fn manifest_jsonl(rows: &[ManifestRow]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("manifest row serializes") + "\n")
        .collect()
}

/// True when `text` contains none of the patches' plaintext candidates.
pub fn is_redacted(text: &str, patches: &[Patch]) -> bool {
    patches.iter().all(|p| !text.contains(&p.candidate))
}
