//! Repository curation and target-function extraction.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{debug, warn};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::python::lexer::{tokenize, TokenKind};
use crate::python::syntax::{site_text, PySource};
use crate::python::count_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Inclusive date window; an absent end is open-ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    #[serde(default)]
    pub end: Option<NaiveDate>,
}

impl DateWindow {
    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && self.end.is_none_or(|end| date <= end)
    }

    pub fn overlaps(&self, other: &DateWindow) -> bool {
        let starts_before_other_ends = other.end.is_none_or(|e| self.start <= e);
        let other_starts_before_end = self.end.is_none_or(|e| other.start <= e);
        starts_before_other_ends && other_starts_before_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationPolicy {
    pub split: Split,
    pub max_repo_size: u64,
    pub per_repo_cap: usize,
    pub license_allowlist: Vec<String>,
    pub train_window: DateWindow,
    pub eval_window: DateWindow,
    /// Category → keywords. A keyword is a name or a dotted name path.
    pub keywords: BTreeMap<String, Vec<String>>,
}

impl Default for CurationPolicy {
    fn default() -> Self {
        let date = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
        let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>();
        let mut keywords = BTreeMap::new();
        keywords.insert(
            "gpu".to_string(),
            words(&["cuda", "gpu", "cudnn", "cupy", "device", "nvidia", "tensorrt"]),
        );
        keywords.insert(
            "cloud".to_string(),
            words(&[
                "boto3",
                "botocore",
                "google.cloud",
                "azure",
                "gcsfs",
                "s3fs",
                "bigquery",
                "sagemaker",
                "dynamodb",
            ]),
        );
        keywords.insert(
            "secrets".to_string(),
            words(&["getenv", "os.environ", "api_key", "secret_key", "aws_access_key_id"]),
        );
        Self {
            split: Split::Train,
            max_repo_size: 10_000_000,
            per_repo_cap: 30,
            license_allowlist: vec!["MIT".to_string()],
            train_window: DateWindow {
                start: date(2023, 1, 31),
                end: Some(date(2024, 8, 31)),
            },
            eval_window: DateWindow {
                start: date(2024, 9, 1),
                end: None,
            },
            keywords,
        }
    }
}

impl CurationPolicy {
    pub fn window(&self, split: Split) -> &DateWindow {
        match split {
            Split::Train => &self.train_window,
            Split::Eval => &self.eval_window,
        }
    }

    pub fn split_of(&self, date: NaiveDate) -> Option<Split> {
        if self.train_window.contains(date) {
            Some(Split::Train)
        } else if self.eval_window.contains(date) {
            Some(Split::Eval)
        } else {
            None
        }
    }
}

/// One line of a repository list: metadata as supplied, possibly incomplete.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepoCandidate {
    #[serde(default)]
    pub repo_id: Option<String>,
    #[serde(default)]
    pub origin: String,
    #[serde(default)]
    pub license: Option<String>,
    #[serde(default)]
    pub created_at: Option<String>,
    #[serde(default)]
    pub fork: Option<bool>,
    #[serde(default)]
    pub size: Option<u64>,
    #[serde(default)]
    pub revision: Option<String>,
}

impl RepoCandidate {
    pub fn id(&self) -> String {
        self.repo_id.clone().unwrap_or_else(|| {
            self.origin
                .trim_end_matches('/')
                .trim_end_matches(".git")
                .rsplit(['/', ':'])
                .next()
                .unwrap_or("repo")
                .to_string()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSnapshot {
    pub repo_id: String,
    pub origin: String,
    pub license_tag: String,
    pub created_at: NaiveDate,
    pub byte_size: u64,
    pub revision: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoRejection {
    pub repo_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub repo_id: String,
    pub file_path: String,
    pub qualified_name: String,
    /// Full definition text (decorators included), dedented to column 0.
    pub body_text: String,
    /// Docstring literal as written in the source, quotes included.
    pub docstring: Option<String>,
    pub line_span: (usize, usize),
    pub token_count: usize,
    pub line_count: usize,
    pub excluded_reason: Option<String>,
}

impl FunctionRecord {
    /// Bare function name.
    pub fn name(&self) -> &str {
        self.qualified_name
            .rsplit('.')
            .next()
            .unwrap_or(&self.qualified_name)
    }

    /// Enclosing class for methods. Derived from the module path of the file.
    pub fn class_name(&self) -> Option<&str> {
        let module = module_name(&self.file_path);
        let rest = self.qualified_name.strip_prefix(&module)?.strip_prefix('.')?;
        let mut parts = rest.split('.');
        match (parts.next(), parts.next()) {
            (Some(cls), Some(_)) => Some(cls),
            _ => None,
        }
    }

    pub fn example_id(&self) -> String {
        example_id(&self.repo_id, &self.qualified_name)
    }
}

pub fn example_id(repo_id: &str, qualified_name: &str) -> String {
    let clean = |s: &str| {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
            .collect::<String>()
    };
    format!("{}__{}", clean(repo_id), clean(qualified_name))
}

/// Result of curating one repository.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub records: Vec<FunctionRecord>,
    pub excluded: Vec<FunctionRecord>,
    pub over_cap: Vec<FunctionRecord>,
    pub skipped_files: Vec<(String, String)>,
}

/// Accept or reject a repository candidate for the policy's split.
pub fn filter_repo(
    meta: &RepoCandidate,
    policy: &CurationPolicy,
) -> std::result::Result<RepoSnapshot, RepoRejection> {
    let repo_id = meta.id();
    let reject = |reason: &str| RepoRejection {
        repo_id: repo_id.clone(),
        reason: reason.to_string(),
    };
    let (Some(license), Some(created), Some(fork), Some(size)) = (
        meta.license.as_deref(),
        meta.created_at.as_deref(),
        meta.fork,
        meta.size,
    ) else {
        return Err(reject("incomplete-metadata"));
    };
    let created_at = parse_date(created).ok_or_else(|| reject("incomplete-metadata"))?;
    if fork {
        return Err(reject("fork"));
    }
    if !policy
        .license_allowlist
        .iter()
        .any(|l| l.eq_ignore_ascii_case(license))
    {
        return Err(reject("license"));
    }
    if size > policy.max_repo_size {
        return Err(reject("too-large"));
    }
    if !policy.window(policy.split).contains(created_at) {
        return Err(reject("out-of-window"));
    }
    Ok(RepoSnapshot {
        repo_id: repo_id.clone(),
        origin: meta.origin.clone(),
        license_tag: license.to_string(),
        created_at,
        byte_size: size,
        revision: meta.revision.clone().unwrap_or_default(),
        split: policy.split,
    })
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .or_else(|| chrono::DateTime::parse_from_rfc3339(s).ok().map(|d| d.date_naive()))
}

/// Reads a repository list (one JSON object per line). Relative origins are
/// resolved against the list file's directory.
pub fn read_repo_list(path: &Path) -> Result<Vec<RepoCandidate>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cand: RepoCandidate = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if !is_remote(&cand.origin) && Path::new(&cand.origin).is_relative() {
            cand.origin = base.join(&cand.origin).to_string_lossy().into_owned();
        }
        out.push(cand);
    }
    Ok(out)
}

/// Reads a directory of checkouts; each subdirectory may carry its metadata
/// in `.forge-meta.json` (missing fields lead to an incomplete-metadata reject).
pub fn read_repo_dir(dir: &Path) -> Result<Vec<RepoCandidate>> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    entries.sort();
    let mut out = Vec::new();
    for path in entries {
        let meta_path = path.join(".forge-meta.json");
        let mut cand = match fs::read_to_string(&meta_path) {
            Ok(text) => serde_json::from_str::<RepoCandidate>(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?,
            Err(_) => RepoCandidate::default(),
        };
        cand.origin = path.to_string_lossy().into_owned();
        if cand.repo_id.is_none() {
            cand.repo_id = path.file_name().map(|n| n.to_string_lossy().into_owned());
        }
        out.push(cand);
    }
    Ok(out)
}

fn is_remote(origin: &str) -> bool {
    origin.contains("://") || origin.starts_with("git@")
}

/// Local checkout path for a snapshot, cloning remote origins into `clone_root`.
pub fn checkout(repo: &RepoSnapshot, clone_root: &Path) -> Result<PathBuf> {
    if !is_remote(&repo.origin) {
        return Ok(PathBuf::from(&repo.origin));
    }
    let dest = clone_root.join(&repo.repo_id);
    if !dest.exists() {
        fs::create_dir_all(clone_root).map_err(|e| Error::io(clone_root, e))?;
        let status = Command::new("git")
            .args(["clone", "--quiet", "--depth", "1", &repo.origin])
            .arg(&dest)
            .status()
            .map_err(|e| Error::io(&dest, e))?;
        if !status.success() {
            return Err(Error::Format(format!("git clone failed for {}", repo.origin)));
        }
    }
    Ok(dest)
}

/// Revision of a checkout: the git HEAD commit when readable, otherwise a
/// digest over the Python sources.
pub fn revision_of(root: &Path) -> String {
    if let Some(rev) = git_head(root) {
        return rev;
    }
    let mut hasher = Sha256::new();
    for (rel, path) in python_files(root) {
        hasher.update(rel.as_bytes());
        hasher.update([0]);
        if let Ok(bytes) = fs::read(&path) {
            hasher.update(&bytes);
        }
        hasher.update([0]);
    }
    format!("sha256:{}", hex::encode(hasher.finalize()))
}

fn git_head(root: &Path) -> Option<String> {
    let head = fs::read_to_string(root.join(".git/HEAD")).ok()?;
    let head = head.trim();
    match head.strip_prefix("ref: ") {
        Some(r) => fs::read_to_string(root.join(".git").join(r))
            .ok()
            .map(|s| s.trim().to_string()),
        None => Some(head.to_string()),
    }
}

const SKIP_DIRS: &[&str] = &[
    ".git",
    ".hg",
    "__pycache__",
    "node_modules",
    "venv",
    ".venv",
    "env",
    "site-packages",
    ".tox",
    "build",
    "dist",
];

/// Sorted (repo-relative path, absolute path) pairs of `.py` files.
pub fn python_files(root: &Path) -> Vec<(String, PathBuf)> {
    let mut out: Vec<(String, PathBuf)> = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            e.depth() == 0
                || !(e.file_type().is_dir()
                    && SKIP_DIRS.contains(&e.file_name().to_string_lossy().as_ref()))
        })
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "py"))
        .filter_map(|e| {
            let rel = e.path().strip_prefix(root).ok()?;
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            Some((rel, e.path().to_path_buf()))
        })
        .collect();
    out.sort();
    out
}

/// Dotted module name for a repo-relative path.
pub fn module_name(file_path: &str) -> String {
    let trimmed = file_path.strip_suffix(".py").unwrap_or(file_path);
    let mut parts: Vec<&str> = trimmed.split('/').collect();
    if parts.last() == Some(&"__init__") && parts.len() > 1 {
        parts.pop();
    }
    if parts.len() > 1 && parts[0] == "src" {
        parts.remove(0);
    }
    parts.join(".")
}

/// Keyword category matched by the source text, if any.
pub fn keyword_match(text: &str, policy: &CurationPolicy) -> Option<String> {
    let tokens = tokenize(text).ok()?;
    let names: Vec<String> = tokens
        .iter()
        .map(|t| match t.kind {
            TokenKind::Name | TokenKind::Op => t.text.to_ascii_lowercase(),
            _ => String::new(),
        })
        .collect();
    for (category, words) in &policy.keywords {
        for word in words {
            let pattern: Vec<String> = word
                .to_ascii_lowercase()
                .split('.')
                .flat_map(|p| [p.to_string(), ".".to_string()])
                .collect();
            let pattern = &pattern[..pattern.len() - 1];
            if names.windows(pattern.len()).any(|w| w == pattern) {
                return Some(format!("keyword:{category}"));
            }
        }
    }
    None
}

/// Extracts candidate target functions from a checked-out repository.
pub fn extract_functions(
    repo: &RepoSnapshot,
    root: &Path,
    policy: &CurationPolicy,
) -> Extraction {
    let mut all = Vec::new();
    let mut skipped = Vec::new();
    for (rel, path) in python_files(root) {
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                skipped.push((rel, e.to_string()));
                continue;
            }
        };
        let src = match PySource::parse(text) {
            Ok(s) => s,
            Err(e) => {
                warn!(repo = %repo.repo_id, file = %rel, "skipping unparseable file: {e}");
                skipped.push((rel, e.to_string()));
                continue;
            }
        };
        let module = module_name(&rel);
        for site in src.all_functions() {
            let body_text = site_text(&src, &site, true);
            let Ok(token_count) = count_tokens(&body_text) else {
                continue;
            };
            if token_count == 0 {
                continue;
            }
            let qualified_name = match &site.class_name {
                Some(cls) => format!("{module}.{cls}.{}", site.name),
                None => format!("{module}.{}", site.name),
            };
            let docstring = src
                .def_node(&site)
                .and_then(|def| def.child_by_field_name("body"))
                .and_then(|body| body.named_child(0))
                .filter(|stmt| stmt.kind() == "expression_statement")
                .and_then(|stmt| stmt.named_child(0))
                .filter(|expr| expr.kind() == "string")
                .map(|s| src.node_text(s).to_string());
            all.push(FunctionRecord {
                repo_id: repo.repo_id.clone(),
                file_path: rel.clone(),
                qualified_name,
                excluded_reason: keyword_match(&body_text, policy),
                body_text,
                docstring,
                line_span: site.lines,
                token_count,
                line_count: site.lines.1 - site.lines.0 + 1,
            });
        }
    }
    all.sort_by(|a, b| (&a.file_path, a.line_span).cmp(&(&b.file_path, b.line_span)));
    let (excluded, mut records): (Vec<_>, Vec<_>) =
        all.into_iter().partition(|r| r.excluded_reason.is_some());
    let over_cap = if records.len() > policy.per_repo_cap {
        records.split_off(policy.per_repo_cap)
    } else {
        Vec::new()
    };
    debug!(
        repo = %repo.repo_id,
        kept = records.len(),
        excluded = excluded.len(),
        over_cap = over_cap.len(),
        "curated repository"
    );
    Extraction {
        records,
        excluded,
        over_cap,
        skipped_files: skipped,
    }
}
