//! Candidate generation, execution, pass@k scoring and self-repair.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::dataset::DatasetExample;
use crate::error::{Error, Result};
use crate::exec_env::{inject_candidate, ExecutionResult, Executor, RunOptions};
use crate::llm::{BlockKind, DecodeParams, Gateway, LlmError, LlmExchange, TemplateId};
use crate::python::PySource;
use crate::scalar::{mean, Scalar};

pub const GROUND_TRUTH: &str = "ground_truth";

/// Prompt context for generating the target: the dependency fragments,
/// then the target's header and docstring with the body left out.
pub fn build_context(example: &DatasetExample) -> String {
    let header = signature_and_docstring(&example.ground_truth_body, &example.eval_script.target_name)
        .unwrap_or_default();
    let mut out = String::new();
    if !example.context_text.trim().is_empty() {
        out.push_str(example.context_text.trim_end());
        out.push_str("\n\n");
    }
    out.push_str(&format!("# file: {}\n", example.file_path));
    if let Some(class) = &example.eval_script.target_class {
        out.push_str(&format!("# method of class {class}\n"));
    }
    out.push_str(&header);
    out.push('\n');
    out
}

/// Decorators and `def` line of a function, plus its docstring if any.
pub fn signature_and_docstring(def_text: &str, name: &str) -> Option<String> {
    let src = PySource::parse(def_text.to_string()).ok()?;
    let site = src
        .all_functions()
        .into_iter()
        .find(|f| f.name == name)
        .or_else(|| src.all_functions().into_iter().next())?;
    let node = src.def_node(&site)?;
    let body = node.child_by_field_name("body")?;
    let text = src.text();
    let mut out = text[site.full_range.start..body.start_byte()].trim_end().to_string();
    let first = body.named_child(0).filter(|s| s.kind() == "expression_statement");
    if let Some(doc) = first.and_then(|s| s.named_child(0)).filter(|e| e.kind() == "string") {
        let line_start = text[..doc.start_byte()].rfind('\n').map(|i| i + 1).unwrap_or(0);
        out.push('\n');
        out.push_str(&text[line_start..doc.end_byte()]);
    }
    Some(out)
}

/// Code from the first fenced block that defines a function. When no
/// function carries the target's name, the first one is renamed to it.
pub fn extract_candidate(exchange: &LlmExchange, target_name: &str) -> Option<String> {
    exchange
        .blocks
        .iter()
        .filter(|b| b.kind == BlockKind::Code)
        .find_map(|b| {
            let src = PySource::parse(b.text.clone()).ok()?;
            let funcs = src.top_level_functions();
            let first = funcs.first()?;
            if funcs.iter().any(|f| f.name == target_name) {
                return Some(b.text.clone());
            }
            let node = src.def_node(first)?;
            let name = node.child_by_field_name("name")?;
            Some(format!(
                "{}{target_name}{}",
                &b.text[..name.start_byte()],
                &b.text[name.end_byte()..]
            ))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSolution {
    pub example_id: String,
    pub producer: String,
    pub attempt_index: usize,
    pub code_text: String,
    pub outcome: Option<ExecutionResult>,
    pub repair_round: usize,
    pub fingerprints: Vec<String>,
}

impl CandidateSolution {
    pub fn passed(&self) -> bool {
        self.outcome.as_ref().is_some_and(ExecutionResult::ok)
    }
}

/// Injects a candidate as the new implementation and runs the tests.
pub fn run_candidate(example: &DatasetExample, code: &str, exec: &Executor) -> ExecutionResult {
    let script = &example.eval_script;
    match inject_candidate(&script.script_text, code, &script.target_name, script.target_class.as_deref()) {
        Ok(text) => exec.run(
            &example.example_id,
            &text,
            &RunOptions {
                coverage: false,
                target_name: script.target_name.clone(),
            },
        ),
        Err(e) => ExecutionResult::rejected(e.to_string()),
    }
}

/// The sandboxed target itself as a candidate.
pub fn ground_truth_candidate(example: &DatasetExample) -> CandidateSolution {
    CandidateSolution {
        example_id: example.example_id.clone(),
        producer: GROUND_TRUTH.into(),
        attempt_index: 0,
        code_text: example.ground_truth_body.clone(),
        outcome: None,
        repair_round: 0,
        fingerprints: Vec::new(),
    }
}

/// Samples `n` candidates for one example. Each draw has its own sample
/// index so replayed responses stay distinct.
pub fn generate_candidates(
    example: &DatasetExample,
    gateway: &Gateway,
    n: usize,
    decode: &DecodeParams,
) -> Result<Vec<CandidateSolution>> {
    let context = build_context(example);
    let target = &example.eval_script.target_name;
    (0..n)
        .map(|i| {
            let ex = gateway.ask(
                TemplateId::Generate,
                &[("func_name", target), ("context", &context)],
                &decode.clone().sample(i as u32),
            )?;
            Ok(CandidateSolution {
                example_id: example.example_id.clone(),
                producer: gateway.model().to_string(),
                attempt_index: i,
                code_text: extract_candidate(&ex, target).unwrap_or_default(),
                outcome: None,
                repair_round: 0,
                fingerprints: vec![ex.fingerprint],
            })
        })
        .collect()
}

/// Feeds the error back to the producer until the candidate passes or
/// `max_rounds` repair rounds are spent. Provider failures leave the
/// candidate as it is.
pub fn self_repair(
    example: &DatasetExample,
    mut candidate: CandidateSolution,
    gateway: &Gateway,
    exec: &Executor,
    max_rounds: usize,
    decode: &DecodeParams,
) -> CandidateSolution {
    if candidate.outcome.is_none() {
        candidate.outcome = Some(run_candidate(example, &candidate.code_text, exec));
    }
    let context = build_context(example);
    let target = &example.eval_script.target_name;
    while !candidate.passed() && candidate.repair_round < max_rounds {
        let err = candidate.outcome.as_ref().map(|o| o.stderr_tail.trim_end().to_string()).unwrap_or_default();
        let round = candidate.repair_round + 1;
        let sample = (candidate.attempt_index * (max_rounds + 1) + round) as u32;
        let ex = match gateway.ask(
            TemplateId::Repair,
            &[
                ("func_name", target),
                ("context", &context),
                ("code", &candidate.code_text),
                ("err_msg", &err),
            ],
            &decode.clone().sample(sample),
        ) {
            Ok(ex) => ex,
            Err(e) => {
                warn!(example = %example.example_id, "repair request failed: {e}");
                break;
            }
        };
        candidate.fingerprints.push(ex.fingerprint.clone());
        candidate.repair_round = round;
        if let Some(code) = extract_candidate(&ex, target) {
            candidate.code_text = code;
            candidate.outcome = Some(run_candidate(example, &candidate.code_text, exec));
        } else {
            debug!(example = %example.example_id, round, "repair response had no function");
        }
    }
    candidate
}

/// Unbiased pass@k, `1 - C(n-c, k) / C(n, k)`, in product form so it is
/// exact for rational scalars.
pub fn pass_at_k<T: Scalar>(n: usize, c: usize, k: usize) -> Result<T> {
    if k > n || k == 0 {
        return Err(Error::InsufficientSamples { n, k });
    }
    assert!(c <= n, "passes exceed attempts");
    if n - c < k {
        return Ok(T::one());
    }
    let kk = T::from_count(k);
    let mut miss = T::one();
    for i in (n - c + 1)..=n {
        miss = miss * (T::one() - kk.clone() / T::from_count(i));
    }
    Ok(T::one() - miss)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub example_id: String,
    pub n: usize,
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKReport<T> {
    pub tallies: Vec<Tally>,
    pub pass_at_k: BTreeMap<usize, T>,
    /// Aggregate pass@1 after each repair round, starting with round 0.
    pub per_round_pass1: Vec<T>,
}

/// Folds executed candidates into per-example tallies and aggregate scores.
/// `repair_rounds` > 0 adds the per-round pass@1 series.
pub fn score<T: Scalar>(
    example_ids: &[String],
    candidates: &[CandidateSolution],
    ks: &[usize],
    repair_rounds: usize,
) -> Result<PassAtKReport<T>> {
    let mut grouped: BTreeMap<&str, Vec<&CandidateSolution>> =
        example_ids.iter().map(|id| (id.as_str(), Vec::new())).collect();
    for c in candidates {
        if let Some(list) = grouped.get_mut(c.example_id.as_str()) {
            list.push(c);
        }
    }
    let tallies: Vec<Tally> = example_ids
        .iter()
        .map(|id| {
            let list = &grouped[id.as_str()];
            Tally {
                example_id: id.clone(),
                n: list.len(),
                c: list.iter().filter(|c| c.passed()).count(),
            }
        })
        .collect();
    let mut pass = BTreeMap::new();
    for &k in ks {
        let scores = tallies
            .iter()
            .map(|t| pass_at_k::<T>(t.n, t.c, k))
            .collect::<Result<Vec<T>>>()?;
        pass.insert(k, mean(scores).unwrap_or_else(T::zero));
    }
    let mut per_round = Vec::new();
    if repair_rounds > 0 {
        for round in 0..=repair_rounds {
            let scores = example_ids
                .iter()
                .map(|id| {
                    let list = &grouped[id.as_str()];
                    let c = list.iter().filter(|c| c.passed() && c.repair_round <= round).count();
                    pass_at_k::<T>(list.len(), c, 1)
                })
                .collect::<Result<Vec<T>>>()?;
            per_round.push(mean(scores).unwrap_or_else(T::zero));
        }
    }
    Ok(PassAtKReport {
        tallies,
        pass_at_k: pass,
        per_round_pass1: per_round,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub n: usize,
    pub ks: Vec<usize>,
    pub repair_rounds: usize,
    pub decode: DecodeParams,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n: 1,
            ks: vec![1],
            repair_rounds: 0,
            decode: DecodeParams::default(),
        }
    }
}

/// Generates, executes and optionally repairs candidates for every example,
/// in parallel across examples. An example whose producer fails keeps
/// failed placeholder candidates so it still counts against the score. A
/// replay miss aborts instead, since scoring it would understate the model.
pub fn evaluate<T: Scalar>(
    examples: &[DatasetExample],
    gateway: &Gateway,
    exec: &Executor,
    settings: &EvalSettings,
) -> Result<(Vec<CandidateSolution>, PassAtKReport<T>)> {
    let per_example: Vec<Vec<CandidateSolution>> = examples
        .par_iter()
        .map(|ex| -> Result<Vec<CandidateSolution>> {
            if let Err(e) = exec.restore_installs(&ex.example_id, ex.install_commands()) {
                warn!(example = %ex.example_id, "restoring installs failed: {e}");
            }
            let candidates = match generate_candidates(ex, gateway, settings.n, &settings.decode) {
                Err(e @ Error::Llm(LlmError::ReplayMiss(_))) => return Err(e),
                other => other,
            };
            let candidates = candidates.unwrap_or_else(|e| {
                warn!(example = %ex.example_id, "generation failed: {e}");
                (0..settings.n)
                    .map(|i| CandidateSolution {
                        example_id: ex.example_id.clone(),
                        producer: gateway.model().to_string(),
                        attempt_index: i,
                        code_text: String::new(),
                        outcome: Some(ExecutionResult::rejected(e.to_string())),
                        repair_round: 0,
                        fingerprints: Vec::new(),
                    })
                    .collect()
            });
            Ok(candidates
                .into_iter()
                .map(|mut c| {
                    if c.outcome.is_none() {
                        c.outcome = Some(run_candidate(ex, &c.code_text, exec));
                    }
                    if settings.repair_rounds > 0 && !c.passed() && !c.code_text.is_empty() {
                        c = self_repair(ex, c, gateway, exec, settings.repair_rounds, &settings.decode);
                    }
                    c
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let candidates: Vec<CandidateSolution> = per_example.into_iter().flatten().collect();
    let ids: Vec<String> = examples.iter().map(|e| e.example_id.clone()).collect();
    let report = score(&ids, &candidates, &settings.ks, settings.repair_rounds)?;
    Ok((candidates, report))
}
