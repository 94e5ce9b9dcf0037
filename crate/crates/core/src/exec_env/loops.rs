use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{extract_function, inject_candidate, outside_function, remove_function, replace_function, ExecutionResult, Executor, RunOptions};
use crate::ingest::FunctionRecord;
use crate::llm::{DecodeParams, Gateway, LlmExchange, TemplateId};
use crate::sandboxer::{cache_dir_for, SanityLimits};
use crate::script::{Dropped, EvalScript, Stage, StageResult};
use crate::test_builder::{test_sanity_check, unseeded_random};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugSettings {
    pub iterations: usize,
    pub limits: SanityLimits,
    pub min_asserts: usize,
    pub decode: DecodeParams,
}

impl Default for DebugSettings {
    fn default() -> Self {
        Self {
            iterations: 3,
            limits: SanityLimits::default(),
            min_asserts: 3,
            decode: DecodeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSettings {
    pub iterations: usize,
    pub limits: SanityLimits,
    pub min_asserts: usize,
    pub decode: DecodeParams,
}

impl Default for CoverageSettings {
    fn default() -> Self {
        Self {
            iterations: 3,
            limits: SanityLimits::default(),
            min_asserts: 3,
            decode: DecodeParams::default(),
        }
    }
}

fn drop(script: &EvalScript, stage: &str, reason: &str, detail: impl Into<String>) -> Dropped {
    Dropped {
        example_id: script.example_id.clone(),
        stage: stage.into(),
        reason: reason.into(),
        detail: detail.into(),
    }
}

/// The script with its own sandboxed target injected as the new implementation.
pub(crate) fn with_ground_truth(script: &EvalScript) -> Result<String, String> {
    let truth = script.target_text().ok_or("target missing")?;
    inject_candidate(
        &script.script_text,
        &truth,
        &script.target_name,
        script.target_class.as_deref(),
    )
    .map_err(|e| e.to_string())
}

fn run_ground_truth(
    script: &mut EvalScript,
    exec: &Executor,
    coverage: bool,
) -> Result<ExecutionResult, String> {
    let injected = with_ground_truth(script)?;
    let opts = RunOptions {
        coverage,
        target_name: script.target_name.clone(),
    };
    let mut installs = script.install_commands.clone();
    let result = exec.run_with_installs(&script.example_id, &injected, &opts, &mut installs);
    script.install_commands = installs;
    Ok(result)
}

/// Executes the script with the ground truth injected and asks for fixes
/// until it runs green or the iteration budget is spent.
pub fn debug_loop(
    script: &EvalScript,
    original: &FunctionRecord,
    gateway: &Gateway,
    exec: &Executor,
    settings: &DebugSettings,
) -> StageResult<EvalScript> {
    let mut current = script.clone();
    if let Err(e) = exec.restore_installs(&current.example_id, &current.install_commands) {
        debug!(example = %current.example_id, "restoring installs failed: {e}");
    }
    let cache_dir = cache_dir_for(&current.example_id);
    let mut last = String::new();
    for iteration in 0..=settings.iterations {
        let result = run_ground_truth(&mut current, exec, false).map_err(|e| drop(script, "verify", "undebuggable", e))?;
        if result.ok() {
            current.stage = Stage::Debugged;
            return Ok(current);
        }
        last = result.error_class.tag().to_string();
        if iteration == settings.iterations {
            break;
        }
        let injected = with_ground_truth(&current).map_err(|e| drop(script, "verify", "undebuggable", e))?;
        let exchange = gateway
            .ask(
                TemplateId::Debug,
                &[
                    ("func_name", &current.target_name),
                    ("test_func_name", &current.test_func_name),
                    ("code", &injected),
                    ("err_msg", result.stderr_tail.trim_end()),
                    ("docker_CACHE_DIR", &cache_dir),
                ],
                &settings.decode.clone().sample(iteration as u32),
            )
            .map_err(|e| drop(script, "verify", "provider-error", e.to_string()))?;
        current.fingerprints.push(exchange.fingerprint.clone());
        if let Some(next) = apply_debug_answer(&current, &exchange, original, exec, settings) {
            current = next;
        } else {
            debug!(example = %current.example_id, iteration, "debug answer rejected");
        }
    }
    Err(drop(script, "verify", "undebuggable", last))
}

fn apply_debug_answer(
    current: &EvalScript,
    exchange: &LlmExchange,
    original: &FunctionRecord,
    exec: &Executor,
    settings: &DebugSettings,
) -> Option<EvalScript> {
    let code = exchange.code().ok()?;
    let new_impl = current.new_implementation_name();
    let text = remove_function(code, &new_impl, current.target_class.as_deref());
    let report = test_sanity_check(
        &text,
        original,
        current.sandboxed_tokens,
        &settings.limits,
        settings.min_asserts,
    );
    if !report.overall || unseeded_random(&text) {
        return None;
    }
    let mut next = EvalScript {
        script_text: text,
        test_count: Some(report.assert_count),
        ..current.clone()
    };
    if let Some(shell) = exchange.shell() {
        for line in shell.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            if let Err(e) = exec.run_declared(&next.example_id, line) {
                debug!(example = %next.example_id, "declared command failed: {e}");
            }
            if !next.install_commands.iter().any(|c| c == line) {
                next.install_commands.push(line.to_string());
            }
        }
    }
    Some(next)
}

/// `line: text` rows for the coverage prompt.
pub fn format_missing(missing: &[(usize, String)]) -> String {
    missing
        .iter()
        .map(|(line, text)| format!("{line}: {text}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Measures branch coverage of the new implementation and asks for more
/// tests until the threshold is met. Only the test function may change.
/// Without a coverage shim the script passes through unmeasured.
pub fn coverage_loop(
    script: &EvalScript,
    original: &FunctionRecord,
    gateway: &Gateway,
    exec: &Executor,
    threshold: f64,
    settings: &CoverageSettings,
) -> StageResult<EvalScript> {
    let mut current = script.clone();
    if !exec.coverage_enabled() {
        current.stage = Stage::CoverageImproved;
        current.coverage_rate = None;
        return Ok(current);
    }
    let cache_dir = cache_dir_for(&current.example_id);
    let mut rate = measure(&mut current, exec).map_err(|e| drop(script, "verify", "coverage-run", e))?;
    let mut iteration = 0;
    while rate.0 < threshold {
        if iteration == settings.iterations {
            return Err(drop(script, "verify", "low-coverage", format!("{:.4}", rate.0)));
        }
        let injected = with_ground_truth(&current).map_err(|e| drop(script, "verify", "coverage-run", e))?;
        let exchange = gateway
            .ask(
                TemplateId::CoverageImprove,
                &[
                    ("func_name", &current.target_name),
                    ("test_func_name", &current.test_func_name),
                    ("code", &injected),
                    ("missing_code", &format_missing(&rate.1)),
                    ("docker_CACHE_DIR", &cache_dir),
                ],
                &settings.decode.clone().sample(iteration as u32),
            )
            .map_err(|e| drop(script, "verify", "provider-error", e.to_string()))?;
        current.fingerprints.push(exchange.fingerprint.clone());
        iteration += 1;
        let Some(candidate) = apply_test_edit(&current, &exchange, original, settings) else {
            continue;
        };
        let mut trial = candidate;
        match measure(&mut trial, exec) {
            Ok(r) => {
                current = trial;
                rate = r;
            }
            Err(e) => debug!(example = %current.example_id, "coverage edit rejected: {e}"),
        }
    }
    current.stage = Stage::CoverageImproved;
    current.coverage_rate = Some(rate.0);
    Ok(current)
}

fn measure(script: &mut EvalScript, exec: &Executor) -> Result<(f64, Vec<(usize, String)>), String> {
    let result = run_ground_truth(script, exec, true)?;
    if !result.ok() {
        return Err(format!("{}: {}", result.error_class.tag(), result.stderr_tail));
    }
    let cov = result.coverage.ok_or("no coverage report")?;
    Ok((cov.branch_rate, cov.missing_lines))
}

fn apply_test_edit(
    current: &EvalScript,
    exchange: &LlmExchange,
    original: &FunctionRecord,
    settings: &CoverageSettings,
) -> Option<EvalScript> {
    let code = exchange.code().ok()?;
    let test_def = extract_function(code, &current.test_func_name)?;
    let text = replace_function(&current.script_text, &current.test_func_name, &test_def)?;
    // confined to the test function
    if outside_function(&text, &current.test_func_name) != outside_function(&current.script_text, &current.test_func_name) {
        return None;
    }
    let report = test_sanity_check(&text, original, current.sandboxed_tokens, &settings.limits, settings.min_asserts);
    if !report.overall || unseeded_random(&text) {
        return None;
    }
    Some(EvalScript {
        script_text: text,
        test_count: Some(report.assert_count),
        ..current.clone()
    })
}
