//! Stage orchestration with on-disk checkpoints and a funnel report.
//!
//! Each stage reads the previous stage's checkpoint and writes its own under
//! `<workdir>/stages/`. A checkpoint records the config hash and a digest of
//! its input, so rerunning a finished stage is a no-op.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::info;

use crate::code_graph::{build_symbol_table, dependency_closure, DependencyClosure};
use crate::config::PipelineConfig;
use crate::dataset::{persist, write_atomic, DatasetExample, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::exec_env::{coverage_loop, debug_loop, Executor};
use crate::ingest::{
    checkout, extract_functions, filter_repo, python_files, read_repo_dir, read_repo_list, revision_of,
    FunctionRecord, RepoSnapshot, Split,
};
use crate::llm::Gateway;
use crate::quality_gate::{gate, Decision, QualityVerdict};
use crate::sandboxer::sandbox;
use crate::script::{Dropped, EvalScript, Stage};
use crate::test_builder::generate_tests;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineStage {
    Ingest,
    Closure,
    Sandbox,
    Gentests,
    Verify,
    Gate,
    Emit,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 7] = [
        PipelineStage::Ingest,
        PipelineStage::Closure,
        PipelineStage::Sandbox,
        PipelineStage::Gentests,
        PipelineStage::Verify,
        PipelineStage::Gate,
        PipelineStage::Emit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineStage::Ingest => "ingest",
            PipelineStage::Closure => "closure",
            PipelineStage::Sandbox => "sandbox",
            PipelineStage::Gentests => "gentests",
            PipelineStage::Verify => "verify",
            PipelineStage::Gate => "gate",
            PipelineStage::Emit => "emit",
        }
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|s| *s == self).expect("listed")
    }

    fn previous(self) -> Option<PipelineStage> {
        self.index().checked_sub(1).map(|i| Self::ALL[i])
    }
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// One target as it moves through the stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkItem {
    pub record: FunctionRecord,
    pub split: Split,
    pub closure: Option<DependencyClosure>,
    pub script: Option<EvalScript>,
    pub verdict: Option<QualityVerdict>,
}

impl WorkItem {
    pub fn example_id(&self) -> String {
        self.record.example_id()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoEntry {
    pub snapshot: RepoSnapshot,
    pub root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    stage: PipelineStage,
    config_hash: String,
    input_digest: String,
    repos: Vec<RepoEntry>,
    items: Vec<WorkItem>,
    drops: Vec<Dropped>,
    repo_report: Option<RepoReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoReport {
    pub inputs: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub stage: PipelineStage,
    pub inputs: usize,
    pub survivors: usize,
    pub drops: BTreeMap<String, usize>,
}

impl StageCounts {
    pub fn dropped(&self) -> usize {
        self.drops.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub config_hash: String,
    pub repos: RepoReport,
    pub stages: Vec<StageCounts>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub funnel: FunnelReport,
    /// Stages computed in this run; the rest were reused from checkpoints.
    pub computed: Vec<PipelineStage>,
    pub dataset: Option<PathBuf>,
}

pub fn stages_dir(workdir: &Path) -> PathBuf {
    workdir.join("stages")
}

fn checkpoint_path(workdir: &Path, stage: PipelineStage) -> PathBuf {
    stages_dir(workdir).join(format!("{}-{}.json", stage.index(), stage.as_str()))
}

pub fn dataset_path(workdir: &Path) -> PathBuf {
    workdir.join("dataset.jsonl")
}

pub fn funnel_path(workdir: &Path) -> PathBuf {
    workdir.join("funnel.json")
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Context<'a> {
    cfg: &'a PipelineConfig,
    hash: String,
    gateway: Option<Gateway>,
    executor: Executor,
}

impl Context<'_> {
    fn gateway(&self) -> Result<&Gateway> {
        self.gateway
            .as_ref()
            .ok_or_else(|| Error::Config("no provider configured".into()))
    }
}

fn dropped(item: &WorkItem, stage: PipelineStage, reason: &str, detail: impl Into<String>) -> Dropped {
    Dropped {
        example_id: item.example_id(),
        stage: stage.as_str().into(),
        reason: reason.into(),
        detail: detail.into(),
    }
}

/// Runs the stages from `from` to `to` inclusive. Stages before `from` must
/// already have checkpoints. Builds the provider gateway from the config.
pub fn run_pipeline(cfg: &PipelineConfig, from: PipelineStage, to: PipelineStage) -> Result<RunSummary> {
    cfg.validate()?;
    let needs_provider = to >= PipelineStage::Sandbox;
    let gateway = if needs_provider { Some(cfg.provider.build()?) } else { None };
    run_with_gateway(cfg, gateway, from, to)
}

/// Like [`run_pipeline`] with a caller-supplied gateway.
pub fn run_with_gateway(
    cfg: &PipelineConfig,
    gateway: Option<Gateway>,
    from: PipelineStage,
    to: PipelineStage,
) -> Result<RunSummary> {
    cfg.validate()?;
    if from > to {
        return Err(Error::Config(format!("stage range {from}..{to} is empty")));
    }
    let ctx = Context {
        cfg,
        hash: cfg.hash(),
        gateway,
        executor: cfg.executor(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let workdir = &cfg.workdir;
    std::fs::create_dir_all(stages_dir(workdir)).map_err(|e| Error::io(workdir, e))?;

    let mut prev: Option<(Checkpoint, String)> = match from.previous() {
        None => None,
        Some(p) => {
            let path = checkpoint_path(workdir, p);
            if !path.exists() {
                return Err(Error::Stage {
                    stage: from.as_str().into(),
                    message: format!("missing checkpoint for {p}"),
                });
            }
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            Some((serde_json::from_slice(&bytes)?, digest(&bytes)))
        }
    };
    let mut computed = Vec::new();
    for stage in PipelineStage::ALL[from.index()..=to.index()].iter().copied() {
        let input_digest = prev.as_ref().map(|(_, d)| d.clone()).unwrap_or_else(|| ingest_digest(cfg));
        let path = checkpoint_path(workdir, stage);
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(cp) = serde_json::from_slice::<Checkpoint>(&bytes) {
                if cp.config_hash == ctx.hash && cp.input_digest == input_digest {
                    info!(%stage, "checkpoint up to date");
                    if stage == PipelineStage::Emit {
                        emit_outputs(&ctx, &cp)?;
                    }
                    prev = Some((cp, digest(&bytes)));
                    continue;
                }
            }
        }
        info!(%stage, "running");
        let cp = pool.install(|| run_stage(&ctx, stage, prev.as_ref().map(|(c, _)| c), input_digest))?;
        if stage == PipelineStage::Emit {
            emit_outputs(&ctx, &cp)?;
        }
        let mut bytes = serde_json::to_vec_pretty(&cp)?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes)?;
        computed.push(stage);
        prev = Some((cp, digest(&bytes)));
    }
    let funnel = funnel_report(workdir, &ctx.hash)?;
    write_json(&funnel_path(workdir), &funnel)?;
    let dataset = (to == PipelineStage::Emit).then(|| dataset_path(workdir));
    Ok(RunSummary {
        funnel,
        computed,
        dataset,
    })
}

/// Input identity of the ingest stage: the repository list or the sorted
/// listing of the repository directory.
fn ingest_digest(cfg: &PipelineConfig) -> String {
    let mut h = Sha256::new();
    if let Some(list) = &cfg.repos {
        h.update(std::fs::read(list).unwrap_or_default());
    }
    if let Some(dir) = &cfg.repo_dir {
        for cand in read_repo_dir(dir).unwrap_or_default() {
            h.update(serde_json::to_vec(&cand).unwrap_or_default());
            for (rel, path) in python_files(Path::new(&cand.origin)) {
                h.update(rel.as_bytes());
                h.update(std::fs::read(path).unwrap_or_default());
            }
        }
    }
    hex::encode(h.finalize())
}

fn run_stage(ctx: &Context<'_>, stage: PipelineStage, prev: Option<&Checkpoint>, input_digest: String) -> Result<Checkpoint> {
    let mut cp = Checkpoint {
        stage,
        config_hash: ctx.hash.clone(),
        input_digest,
        repos: prev.map(|p| p.repos.clone()).unwrap_or_default(),
        items: Vec::new(),
        drops: Vec::new(),
        repo_report: None,
    };
    if stage == PipelineStage::Ingest {
        ingest_stage(ctx, &mut cp)?;
        return Ok(cp);
    }
    let prev = prev.expect("non-ingest stages have an input");
    let input = prev.items.clone();
    let results: Vec<std::result::Result<WorkItem, Dropped>> = match stage {
        PipelineStage::Closure => closure_stage(&cp.repos, input),
        _ => input.into_par_iter().map(|item| process(ctx, stage, item)).collect::<Result<Vec<_>>>()?,
    };
    for r in results {
        match r {
            Ok(item) => cp.items.push(item),
            Err(d) => cp.drops.push(d),
        }
    }
    Ok(cp)
}

fn ingest_stage(ctx: &Context<'_>, cp: &mut Checkpoint) -> Result<()> {
    let cfg = ctx.cfg;
    let candidates = match (&cfg.repos, &cfg.repo_dir) {
        (Some(list), _) => read_repo_list(list)?,
        (None, Some(dir)) => read_repo_dir(dir)?,
        (None, None) => Vec::new(),
    };
    let mut report = RepoReport {
        inputs: candidates.len(),
        ..RepoReport::default()
    };
    let clone_root = cfg.workdir.join("clones");
    for cand in candidates {
        let mut snapshot = match filter_repo(&cand, &cfg.curation) {
            Ok(s) => s,
            Err(rej) => {
                *report.rejected.entry(rej.reason).or_default() += 1;
                continue;
            }
        };
        let root = match checkout(&snapshot, &clone_root) {
            Ok(r) => r,
            Err(_) => {
                *report.rejected.entry("checkout".into()).or_default() += 1;
                continue;
            }
        };
        if python_files(&root).is_empty() {
            *report.rejected.entry("empty-repo".into()).or_default() += 1;
            continue;
        }
        if snapshot.revision.is_empty() {
            snapshot.revision = revision_of(&root);
        }
        let extraction = extract_functions(&snapshot, &root, &cfg.curation);
        for r in extraction.excluded {
            let reason = r.excluded_reason.clone().unwrap_or_default();
            cp.drops.push(Dropped {
                example_id: r.example_id(),
                stage: "ingest".into(),
                reason,
                detail: r.qualified_name.clone(),
            });
        }
        for r in extraction.over_cap {
            cp.drops.push(Dropped {
                example_id: r.example_id(),
                stage: "ingest".into(),
                reason: "per-repo-cap".into(),
                detail: r.qualified_name.clone(),
            });
        }
        for record in extraction.records {
            cp.items.push(WorkItem {
                record,
                split: snapshot.split,
                closure: None,
                script: None,
                verdict: None,
            });
        }
        report.accepted += 1;
        cp.repos.push(RepoEntry { snapshot, root });
    }
    cp.repo_report = Some(report);
    Ok(())
}

fn closure_stage(repos: &[RepoEntry], input: Vec<WorkItem>) -> Vec<std::result::Result<WorkItem, Dropped>> {
    let roots: BTreeMap<&str, &Path> = repos
        .iter()
        .map(|r| (r.snapshot.repo_id.as_str(), r.root.as_path()))
        .collect();
    let tables: BTreeMap<&str, std::result::Result<crate::code_graph::SymbolTable, String>> = roots
        .par_iter()
        .map(|(id, root)| (*id, build_symbol_table(root).map_err(|e| e.to_string())))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    input
        .into_par_iter()
        .map(|mut item| {
            let table = match tables.get(item.record.repo_id.as_str()) {
                Some(Ok(t)) => t,
                Some(Err(e)) => return Err(dropped(&item, PipelineStage::Closure, "closure-error", e.clone())),
                None => return Err(dropped(&item, PipelineStage::Closure, "closure-error", "repository missing")),
            };
            match dependency_closure(&item.record, table) {
                Ok(c) if c.degraded => Err(dropped(&item, PipelineStage::Closure, "closure-degraded", "")),
                Ok(c) => {
                    item.closure = Some(c);
                    Ok(item)
                }
                Err(e) => Err(dropped(&item, PipelineStage::Closure, "closure-error", e.to_string())),
            }
        })
        .collect()
}

/// One item through one LLM/execution stage. Only an unusable config is an
/// error; everything else is a drop.
fn process(ctx: &Context<'_>, stage: PipelineStage, mut item: WorkItem) -> Result<std::result::Result<WorkItem, Dropped>> {
    let cfg = ctx.cfg;
    let missing = |what: &str| Error::Stage {
        stage: stage.as_str().into(),
        message: format!("{} has no {what}", item.example_id()),
    };
    let outcome = match stage {
        PipelineStage::Sandbox => {
            let closure = item.closure.as_ref().ok_or_else(|| missing("closure"))?;
            sandbox(closure, ctx.gateway()?, &cfg.sandbox_settings())
        }
        PipelineStage::Gentests => {
            let script = item.script.as_ref().ok_or_else(|| missing("script"))?;
            generate_tests(script, &item.record, ctx.gateway()?, &cfg.test_settings())
        }
        PipelineStage::Verify => {
            let script = item.script.as_ref().ok_or_else(|| missing("script"))?;
            let gw = ctx.gateway()?;
            debug_loop(script, &item.record, gw, &ctx.executor, &cfg.debug_settings()).and_then(|s| {
                let threshold = match item.split {
                    Split::Train => cfg.thresholds.coverage_train,
                    Split::Eval => cfg.thresholds.coverage_eval,
                };
                coverage_loop(&s, &item.record, gw, &ctx.executor, threshold, &cfg.coverage_settings())
            })
        }
        PipelineStage::Gate => {
            let script = item.script.as_ref().ok_or_else(|| missing("script"))?;
            let mut trace = Vec::new();
            match gate(&item.record, script, item.split, ctx.gateway()?, &cfg.provider.decode(), &mut trace) {
                Err(e) => Err(dropped(&item, stage, "provider-error", e.to_string())),
                Ok(verdict) => {
                    let mut s = script.clone();
                    s.fingerprints.extend(trace);
                    let decision = verdict.decision.clone();
                    item.verdict = Some(verdict);
                    match decision {
                        Decision::Keep => Ok(s),
                        Decision::Drop(reason) => Err(dropped(&item, stage, &reason, "")),
                    }
                }
            }
        }
        PipelineStage::Emit => {
            let script = item.script.as_ref().ok_or_else(|| missing("script"))?;
            if script.target_text().is_none() {
                Err(dropped(&item, stage, "emit-invalid", "target missing from final script"))
            } else {
                let mut s = script.clone();
                s.stage = Stage::Final;
                Ok(s)
            }
        }
        PipelineStage::Ingest | PipelineStage::Closure => unreachable!("handled separately"),
    };
    Ok(outcome.map(|s| {
        item.script = Some(s);
        item
    }))
}

/// A finished work item as a dataset record.
pub fn to_example(item: &WorkItem, config_hash: &str) -> Option<DatasetExample> {
    let closure = item.closure.as_ref()?;
    let script = item.script.as_ref()?;
    Some(DatasetExample {
        schema_version: SCHEMA_VERSION,
        example_id: item.example_id(),
        repo_id: item.record.repo_id.clone(),
        qualified_name: item.record.qualified_name.clone(),
        file_path: item.record.file_path.clone(),
        line_span: item.record.line_span,
        docstring: item.record.docstring.clone(),
        context_text: closure.context_text(),
        ground_truth_body: script.target_text()?,
        eval_script: script.clone(),
        standalone: closure.standalone,
        split: item.split,
        config_hash: config_hash.to_string(),
    })
}

fn emit_outputs(ctx: &Context<'_>, cp: &Checkpoint) -> Result<()> {
    let examples: Vec<DatasetExample> = cp.items.iter().filter_map(|i| to_example(i, &ctx.hash)).collect();
    persist(&dataset_path(&ctx.cfg.workdir), &examples)
}

/// Per-stage counts rebuilt from whatever checkpoints exist.
pub fn funnel_report(workdir: &Path, config_hash: &str) -> Result<FunnelReport> {
    let mut stages = Vec::new();
    let mut repos = RepoReport::default();
    for stage in PipelineStage::ALL {
        let path = checkpoint_path(workdir, stage);
        if !path.exists() {
            break;
        }
        let cp: Checkpoint = read_json(&path)?;
        if let Some(r) = cp.repo_report {
            repos = r;
        }
        let mut drops = BTreeMap::new();
        for d in &cp.drops {
            *drops.entry(d.reason.clone()).or_default() += 1;
        }
        stages.push(StageCounts {
            stage,
            inputs: cp.items.len() + cp.drops.len(),
            survivors: cp.items.len(),
            drops,
        });
    }
    Ok(FunnelReport {
        config_hash: config_hash.to_string(),
        repos,
        stages,
    })
}

/// Every drop recorded so far, in stage order.
pub fn all_drops(workdir: &Path) -> Result<Vec<Dropped>> {
    let mut out = Vec::new();
    for stage in PipelineStage::ALL {
        let path = checkpoint_path(workdir, stage);
        if !path.exists() {
            break;
        }
        let cp: Checkpoint = read_json(&path)?;
        out.extend(cp.drops);
    }
    Ok(out)
}

/// Surviving items after a stage, for inspection and tests.
pub fn stage_items(workdir: &Path, stage: PipelineStage) -> Result<Vec<WorkItem>> {
    let cp: Checkpoint = read_json(&checkpoint_path(workdir, stage))?;
    Ok(cp.items)
}
