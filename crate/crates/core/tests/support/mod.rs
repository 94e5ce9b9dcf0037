//! Shared fixtures for the integration suites: a scripted model that answers
//! from files under `fixtures/scripted`, and configs wired to the fixture
//! corpus.
#![allow(dead_code)]

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use forge_core::config::{PipelineConfig, ProviderKind};
use forge_core::exec_env::replace_function;
use forge_core::ingest::Split;
use forge_core::llm::{Gateway, LlmError, Provider, Request, TemplateId};
use regex::Regex;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn replay_dir() -> PathBuf {
    fixtures().join("replay")
}

/// Pipeline config over the fixture repos, replaying the frozen cache.
pub fn fixture_config(workdir: &Path, split: Split) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        workdir: workdir.join("work"),
        repo_dir: Some(fixtures().join("repos")),
        workers: 4,
        ..Default::default()
    };
    cfg.curation.split = split;
    cfg.provider.kind = ProviderKind::Replay;
    cfg.provider.model = "scripted".into();
    cfg.provider.cache = Some(replay_dir());
    cfg.exec.python = "python3".into();
    cfg.exec.timeout_s = 30;
    cfg.exec.installer = format!(
        "{{python}} {} {{env}} {{package}}",
        fixtures().join("fake_pip.py").display()
    );
    cfg.exec.envs_root = Some(workdir.join("envs"));
    cfg
}

pub fn scripted_gateway(model: &str) -> Gateway {
    Gateway::new(Arc::new(ScriptedProvider::new(model)), 4)
}

/// Answers each prompt from `fixtures/scripted/<example_id>/`:
///
/// - `sandbox[.N].py` is the whole sandboxed script
/// - `tests[.N].py` is appended to the prompt's script
/// - `debug[.N].py` and `coverage[.N].py` replace the test function
/// - `generate[.N].py` and `repair[.N].py` are candidate definitions
/// - `equiv.txt` and `test_check.txt` are raw verdicts
///
/// `.N` is the sample index; the unnumbered file is the fallback. A missing
/// file yields a reply without code.
pub struct ScriptedProvider {
    root: PathBuf,
    model: String,
    parsers: HashMap<TemplateId, (Regex, Vec<String>)>,
    ids: Vec<String>,
}

impl ScriptedProvider {
    pub fn new(model: &str) -> Self {
        Self::with_root(fixtures().join("scripted"), model)
    }

    pub fn with_root(root: PathBuf, model: &str) -> Self {
        let mut ids: Vec<String> = fs::read_dir(&root)
            .expect("scripted fixtures")
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        ids.sort();
        let parsers = TemplateId::ALL.into_iter().map(|t| (t, template_parser(t))).collect();
        Self {
            root,
            model: model.to_string(),
            parsers,
            ids,
        }
    }

    fn bindings(&self, id: TemplateId, prompt: &str) -> Option<HashMap<String, String>> {
        let (re, names) = &self.parsers[&id];
        let caps = re.captures(prompt)?;
        let mut out = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            out.entry(name.clone())
                .or_insert_with(|| caps.get(i + 1).map_or(String::new(), |m| m.as_str().to_string()));
        }
        Some(out)
    }

    /// The cache dir names the example outright; otherwise the function name
    /// picks it, with the scripted sandbox breaking ties.
    fn example_for(&self, b: &HashMap<String, String>) -> Option<String> {
        if let Some(dir) = b.get("docker_CACHE_DIR") {
            return dir.strip_prefix("/forge_cache/").map(str::to_string);
        }
        let name = b.get("func_name")?;
        let suffix = format!("_{name}");
        let def = format!("def {name}(");
        let matches: Vec<&String> = self.ids.iter().filter(|id| id.ends_with(&suffix)).collect();
        if matches.len() <= 1 {
            return matches.first().map(|s| s.to_string());
        }
        matches
            .into_iter()
            .find(|id| {
                fs::read_to_string(self.root.join(id).join("sandbox.py"))
                    .is_ok_and(|s| s.contains(&def))
            })
            .cloned()
    }

    fn pick(&self, example: &str, stem: &str, ext: &str, sample: u32) -> Option<String> {
        let dir = self.root.join(example);
        fs::read_to_string(dir.join(format!("{stem}.{sample}.{ext}")))
            .or_else(|_| fs::read_to_string(dir.join(format!("{stem}.{ext}"))))
            .ok()
    }
}

fn template_parser(id: TemplateId) -> (Regex, Vec<String>) {
    let placeholder = Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap();
    let text = id.text();
    let mut pattern = String::from("(?s)^");
    let mut names = Vec::new();
    let mut last = 0;
    for c in placeholder.captures_iter(text) {
        let m = c.get(0).unwrap();
        pattern.push_str(&regex::escape(&text[last..m.start()]));
        pattern.push_str("(.*?)");
        names.push(c[1].to_string());
        last = m.end();
    }
    pattern.push_str(&regex::escape(&text[last..]));
    pattern.push('$');
    (Regex::new(&pattern).unwrap(), names)
}

fn fenced(code: &str) -> String {
    format!("Here is the code.\n\n```python\n{}\n```\n", code.trim_end())
}

const NO_CODE: &str = "I am unable to produce code for this request.";

impl Provider for ScriptedProvider {
    fn tag(&self) -> &str {
        "scripted"
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &Request) -> Result<String, LlmError> {
        let t = request.template_id;
        let b = self
            .bindings(t, &request.prompt)
            .ok_or_else(|| LlmError::ProviderUnavailable(format!("prompt does not match template {t}")))?;
        let Some(example) = self.example_for(&b) else {
            return Ok(NO_CODE.to_string());
        };
        let n = request.params.sample;
        let code = || b.get("code").cloned().unwrap_or_default();
        let reply = match t {
            TemplateId::Sandbox => self.pick(&example, "sandbox", "py", n).map(|s| fenced(&s)),
            TemplateId::Testgen => self
                .pick(&example, "tests", "py", n)
                .map(|tests| fenced(&format!("{}\n\n\n{}", code().trim_end(), tests))),
            TemplateId::Debug | TemplateId::CoverageImprove => {
                let stem = if t == TemplateId::Debug { "debug" } else { "coverage" };
                let test_name = b.get("test_func_name").cloned().unwrap_or_default();
                self.pick(&example, stem, "py", n)
                    .and_then(|def| replace_function(&code(), &test_name, &def))
                    .map(|s| fenced(&s))
            }
            TemplateId::FuncEquivCheck => {
                Some(self.pick(&example, "equiv", "txt", n).unwrap_or_else(|| "ANSWER: no".into()))
            }
            TemplateId::TestCorrectCheck => Some(
                self.pick(&example, "test_check", "txt", n)
                    .unwrap_or_else(|| "ANSWER: yes".into()),
            ),
            TemplateId::Generate => self.pick(&example, "generate", "py", n).map(|s| fenced(&s)),
            TemplateId::Repair => self.pick(&example, "repair", "py", n).map(|s| fenced(&s)),
        };
        Ok(reply.unwrap_or_else(|| NO_CODE.to_string()))
    }
}

/// Settings shared by the recorder and the suites that replay its output.
pub const EVAL_N: usize = 2;
pub const EVAL_KS: [usize; 2] = [1, 2];
pub const EVAL_ROUNDS: usize = 2;
pub const HARVEST_N: usize = 2;

pub fn eval_settings(cfg: &PipelineConfig) -> forge_core::eval_harness::EvalSettings {
    forge_core::eval_harness::EvalSettings {
        n: EVAL_N,
        ks: EVAL_KS.to_vec(),
        repair_rounds: EVAL_ROUNDS,
        decode: cfg.provider.sample_decode(),
    }
}

pub fn golden_funnel(split: Split) -> PathBuf {
    fixtures().join(format!("golden/funnel-{split}.json"))
}

pub fn golden_dataset(split: Split) -> PathBuf {
    fixtures().join(format!("golden/dataset-{split}.jsonl"))
}

/// Behavior-changing edit of a function definition: the first comparison
/// operator is negated, or failing that the first integer literal is
/// incremented. `None` when neither exists.
pub fn mutate(def_text: &str) -> Option<String> {
    use forge_core::python::syntax::descendants;
    use forge_core::python::PySource;

    let src = PySource::parse(def_text.to_string()).ok()?;
    let nodes = descendants(src.root());
    let flip = |op: &str| match op {
        "<" => Some(">="),
        ">=" => Some("<"),
        ">" => Some("<="),
        "<=" => Some(">"),
        "==" => Some("!="),
        "!=" => Some("=="),
        _ => None,
    };
    let comparison = nodes
        .iter()
        .filter(|n| n.kind() == "comparison_operator")
        .flat_map(|n| (0..n.child_count()).filter_map(move |i| n.child(i)))
        .find(|c| !c.is_named() && flip(c.kind()).is_some());
    let (range, replacement) = match comparison {
        Some(op) => (op.byte_range(), flip(op.kind())?.to_string()),
        None => {
            let lit = nodes.iter().find(|n| n.kind() == "integer")?;
            let value: i64 = src.node_text(*lit).replace('_', "").parse().ok()?;
            (lit.byte_range(), (value + 1).to_string())
        }
    };
    let mut out = def_text.to_string();
    out.replace_range(range, &replacement);
    Some(out)
}

/// The examples designed so that `mutate` changes observable behavior.
pub const MUTATION_TARGETS: [&str; 12] = [
    "textkit__textkit_normalize_slugify",
    "textkit__textkit_wrap_truncate",
    "textkit__textkit_wrap_wrap_words",
    "geomlib__geomlib_shapes_Rect_contains",
    "geomlib__geomlib_ops_nearest",
    "weatherapi__weatherapi_units_classify",
    "weatherapi__weatherapi_client_fetch_forecast",
    "weatherapi__weatherapi_client_max_temperature",
    "csvtools__csvtools_summary_column_mean",
    "mathx__mathx_series_moving_average",
    "mathx__mathx_primes_is_prime",
    "mathx__mathx_fmt_percent",
];

/// The extracted record for one fixture function.
pub fn fixture_record(repo: &str, qualified_name: &str) -> forge_core::ingest::FunctionRecord {
    use forge_core::ingest::{extract_functions, CurationPolicy, RepoSnapshot};

    let root = fixtures().join("repos").join(repo);
    let snapshot = RepoSnapshot {
        repo_id: repo.into(),
        origin: root.display().to_string(),
        license_tag: "MIT".into(),
        created_at: chrono::NaiveDate::from_ymd_opt(2023, 6, 1).unwrap(),
        byte_size: 0,
        revision: "fixture".into(),
        split: Split::Train,
    };
    let ex = extract_functions(&snapshot, &root, &CurationPolicy::default());
    ex.records
        .into_iter()
        .chain(ex.excluded)
        .find(|r| r.qualified_name == qualified_name)
        .unwrap_or_else(|| panic!("no fixture function {qualified_name}"))
}

pub fn golden_example(split: Split, example_id: &str) -> forge_core::dataset::DatasetExample {
    forge_core::dataset::load(&golden_dataset(split))
        .unwrap()
        .into_iter()
        .find(|e| e.example_id == example_id)
        .unwrap_or_else(|| panic!("no golden example {example_id}"))
}
