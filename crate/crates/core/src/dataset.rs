//! Finished environments on disk, corpus statistics and subset sampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec_env::package_for_module;
use crate::ingest::Split;
use crate::python::stdlib::is_stdlib;
use crate::python::syntax::{descendants, named_children};
use crate::python::{count_tokens, PySource};
use crate::scalar::{fraction, mean, Scalar};
use crate::script::{EvalScript, Stage};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetExample {
    pub schema_version: u32,
    pub example_id: String,
    pub repo_id: String,
    pub qualified_name: String,
    pub file_path: String,
    pub line_span: (usize, usize),
    pub docstring: Option<String>,
    /// Rendered closure fragments, target excluded.
    pub context_text: String,
    pub eval_script: EvalScript,
    /// The sandboxed target as it appears in the final script.
    pub ground_truth_body: String,
    pub standalone: bool,
    pub split: Split,
    pub config_hash: String,
}

impl DatasetExample {
    pub fn install_commands(&self) -> &[String] {
        &self.eval_script.install_commands
    }

    pub fn coverage_rate(&self) -> Option<f64> {
        self.eval_script.coverage_rate
    }

    pub fn test_count(&self) -> usize {
        self.eval_script.test_count.unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidRecord(format!(
                "{}: schema version {}",
                self.example_id, self.schema_version
            )));
        }
        if self.eval_script.stage != Stage::Final {
            return Err(Error::InvalidRecord(format!(
                "{}: stage {} is not final",
                self.example_id,
                self.eval_script.stage.as_str()
            )));
        }
        if self.example_id != self.eval_script.example_id {
            return Err(Error::InvalidRecord(format!("{}: script id mismatch", self.example_id)));
        }
        Ok(())
    }
}

/// Writes the dataset as JSON lines, replacing any existing file atomically.
pub fn persist(path: &Path, examples: &[DatasetExample]) -> Result<()> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for ex in examples {
        ex.validate()?;
        if !seen.insert(ex.example_id.as_str()) {
            return Err(Error::DuplicateExample(ex.example_id.clone()));
        }
        serde_json::to_writer(&mut out, ex)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<DatasetExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: DatasetExample = serde_json::from_str(line)
            .map_err(|e| Error::InvalidRecord(format!("{}:{}: {e}", path.display(), i + 1)))?;
        ex.validate()?;
        if !seen.insert(ex.example_id.clone()) {
            return Err(Error::DuplicateExample(ex.example_id));
        }
        out.push(ex);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats<T> {
    pub examples: usize,
    pub avg_target_tokens: T,
    pub avg_target_lines: T,
    pub avg_script_tokens: T,
    pub avg_script_lines: T,
    pub avg_test_cases: T,
    /// Absent when no example carries a coverage measurement.
    pub avg_branch_coverage: Option<T>,
    /// Fraction in [0, 1].
    pub standalone_fraction: T,
    pub distinct_libraries: usize,
}

fn line_count(text: &str) -> usize {
    text.trim_end().lines().count()
}

/// Top-level non-stdlib modules a script imports, mapped to package names.
pub fn external_imports(script: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let Ok(src) = PySource::parse(script.to_string()) else {
        return out;
    };
    for node in descendants(src.root()) {
        let modules: Vec<&str> = match node.kind() {
            "import_statement" => named_children(node)
                .into_iter()
                .filter_map(|c| match c.kind() {
                    "dotted_name" => Some(src.node_text(c)),
                    "aliased_import" => c.child_by_field_name("name").map(|n| src.node_text(n)),
                    _ => None,
                })
                .collect(),
            "import_from_statement" => node
                .child_by_field_name("module_name")
                .filter(|m| m.kind() == "dotted_name")
                .map(|m| vec![src.node_text(m)])
                .unwrap_or_default(),
            _ => continue,
        };
        for m in modules {
            let top = m.split('.').next().unwrap_or(m);
            if !top.is_empty() && !is_stdlib(top) {
                out.insert(package_for_module(top).to_ascii_lowercase());
            }
        }
    }
    out
}

/// Package named by an install command, without version pins or flags.
pub fn installed_package(command: &str) -> Option<String> {
    let mut words = command.split_whitespace();
    words.by_ref().find(|w| *w == "install")?;
    let pkg = words.find(|w| !w.starts_with('-'))?;
    let name: String = pkg
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        .collect();
    (!name.is_empty()).then(|| name.to_ascii_lowercase())
}

pub fn compute_stats<T: Scalar>(examples: &[DatasetExample]) -> Result<CorpusStats<T>> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let avg = |f: &dyn Fn(&DatasetExample) -> usize| {
        mean(examples.iter().map(|e| T::from_count(f(e)))).expect("non-empty")
    };
    let tokens = |t: &str| count_tokens(t).unwrap_or(0);
    let coverage: Vec<T> = examples
        .iter()
        .filter_map(|e| e.coverage_rate())
        .map(|r| T::from_f64(r).expect("finite coverage"))
        .collect();
    let mut libraries = BTreeSet::new();
    for e in examples {
        libraries.extend(e.install_commands().iter().filter_map(|c| installed_package(c)));
        libraries.extend(external_imports(&e.eval_script.script_text));
    }
    Ok(CorpusStats {
        examples: examples.len(),
        avg_target_tokens: avg(&|e| tokens(&e.ground_truth_body)),
        avg_target_lines: avg(&|e| line_count(&e.ground_truth_body)),
        avg_script_tokens: avg(&|e| tokens(&e.eval_script.script_text)),
        avg_script_lines: avg(&|e| line_count(&e.eval_script.script_text)),
        avg_test_cases: avg(&|e| e.test_count()),
        avg_branch_coverage: mean(coverage),
        standalone_fraction: fraction(examples.iter().filter(|e| e.standalone).count(), examples.len()),
        distinct_libraries: libraries.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStrategy {
    ByExample,
    ByRepo,
}

impl std::str::FromStr for SampleStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "by_example" => Ok(SampleStrategy::ByExample),
            "by_repo" => Ok(SampleStrategy::ByRepo),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Indices of the chosen items, in dataset order.
///
/// `ByExample` draws `n` items uniformly. `ByRepo` shuffles the distinct
/// repositories and takes whole repositories in that order, cutting the
/// last one short so exactly `n` items are returned.
pub fn sample_indices(repos: &[&str], n: usize, strategy: SampleStrategy, seed: u64) -> Result<Vec<usize>> {
    if n > repos.len() {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: repos.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = match strategy {
        SampleStrategy::ByExample => rand::seq::index::sample(&mut rng, repos.len(), n).into_vec(),
        SampleStrategy::ByRepo => {
            let mut by_repo: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, r) in repos.iter().enumerate() {
                by_repo.entry(r).or_default().push(i);
            }
            let mut order: Vec<&str> = by_repo.keys().copied().collect();
            order.shuffle(&mut rng);
            let mut picked = Vec::with_capacity(n);
            for repo in order {
                let room = n - picked.len();
                if room == 0 {
                    break;
                }
                picked.extend(by_repo[repo].iter().take(room));
            }
            picked
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

pub fn sample_subset(
    examples: &[DatasetExample],
    n: usize,
    strategy: SampleStrategy,
    seed: u64,
) -> Result<Vec<DatasetExample>> {
    let repos: Vec<&str> = examples.iter().map(|e| e.repo_id.as_str()).collect();
    Ok(sample_indices(&repos, n, strategy, seed)?
        .into_iter()
        .map(|i| examples[i].clone())
        .collect())
}
