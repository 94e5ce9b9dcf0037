//! Adds the equivalence test and main entry to a sandboxed script.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::debug;
use tree_sitter::Node;

use crate::ingest::FunctionRecord;
use crate::llm::{DecodeParams, Gateway, TemplateId};
use crate::python::syntax::{descendants, has_ancestor_kind};
use crate::python::{count_tokens, PySource};
use crate::sandboxer::{cache_dir_for, SanityLimits};
use crate::script::{body_tokens, def_tokens, find_target, new_implementation_name, Dropped, EvalScript, Stage, StageResult};

/// Machine-readable tag for each of the ten checks, indexed from 1.
pub const CHECK_TAGS: [&str; 10] = [
    "target-missing",
    "target-shrunk",
    "script-shrunk",
    "test-missing",
    "test-skips-target",
    "test-skips-new-impl",
    "few-asserts",
    "main-missing",
    "main-skips-test",
    "test-call-in-try",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSanityReport {
    pub checks: BTreeMap<u8, bool>,
    pub overall: bool,
    pub parse_error: bool,
    pub assert_count: usize,
}

impl TestSanityReport {
    fn from_checks(values: [bool; 10], assert_count: usize) -> Self {
        let checks: BTreeMap<u8, bool> = (1u8..).zip(values).collect();
        Self {
            overall: values.iter().all(|v| *v),
            checks,
            parse_error: false,
            assert_count,
        }
    }

    fn parse_failure() -> Self {
        let mut r = Self::from_checks([false; 10], 0);
        r.parse_error = true;
        r
    }

    pub fn failed(&self) -> Vec<u8> {
        self.checks.iter().filter(|(_, ok)| !**ok).map(|(k, _)| *k).collect()
    }

    /// Tag of the first failing check, or "parse".
    pub fn reason(&self) -> Option<&'static str> {
        if self.parse_error {
            return Some("parse");
        }
        self.failed().first().map(|k| CHECK_TAGS[*k as usize - 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSettings {
    pub regenerations: usize,
    pub limits: SanityLimits,
    pub min_asserts: usize,
    pub decode: DecodeParams,
}

impl Default for TestSettings {
    fn default() -> Self {
        Self {
            regenerations: 3,
            limits: SanityLimits::default(),
            min_asserts: 3,
            decode: DecodeParams::default(),
        }
    }
}

/// Runs the ten structural checks on a tested script.
pub fn test_sanity_check(
    script_text: &str,
    original: &FunctionRecord,
    sandboxed_tokens: usize,
    limits: &SanityLimits,
    min_asserts: usize,
) -> TestSanityReport {
    let Ok(src) = PySource::parse(script_text.to_string()) else {
        return TestSanityReport::parse_failure();
    };
    let Ok(script_tokens) = count_tokens(script_text) else {
        return TestSanityReport::parse_failure();
    };
    let name = original.name();
    let target = find_target(&src, name, original.class_name());
    let original_tokens = body_tokens(&original.body_text, name).unwrap_or(original.token_count);
    let c2 = target
        .as_ref()
        .and_then(|s| def_tokens(&src, s))
        .is_some_and(|t| t + limits.target_delta >= original_tokens);

    let test_name = format!("test_{name}");
    let test_node = src
        .find_function(&test_name, None)
        .and_then(|site| src.def_node(&site));
    let new_impl = new_implementation_name(name);
    let (c5, c6, asserts) = match test_node {
        Some(t) => (
            !src.calls_to(t, name).is_empty(),
            src.references(t, &new_impl)
                || descendants(t)
                    .iter()
                    .any(|n| n.kind() == "attribute" && src.field_text(*n, "attribute") == Some(new_impl.as_str())),
            src.count_kind(t, "assert_statement"),
        ),
        None => (false, false, 0),
    };

    let guard = src.main_guard();
    let calls = guard.map(|g| main_calls(&src, g, &test_name)).unwrap_or_default();
    let c9 = !calls.is_empty();
    let c10 = calls.iter().all(|in_try| !in_try);

    TestSanityReport::from_checks(
        [
            target.is_some(),
            c2,
            script_tokens >= sandboxed_tokens,
            test_node.is_some(),
            c5,
            c6,
            asserts >= min_asserts,
            guard.is_some(),
            c9,
            c10,
        ],
        asserts,
    )
}

/// Calls to the test reachable from the main guard, directly or through
/// one top-level helper the guard calls (a conventional `main()`). Each
/// entry says whether that call path runs inside a `try`.
fn main_calls(src: &PySource, guard: Node<'_>, test_name: &str) -> Vec<bool> {
    let mut out: Vec<bool> = src
        .calls_to(guard, test_name)
        .into_iter()
        .map(|c| has_ancestor_kind(c, "try_statement", guard))
        .collect();
    for f in src.top_level_functions() {
        let helper_calls = src.calls_to(guard, &f.name);
        if f.name == test_name || helper_calls.is_empty() {
            continue;
        }
        let Some(def) = src.def_node(&f) else { continue };
        let wrapped = helper_calls
            .iter()
            .any(|c| has_ancestor_kind(*c, "try_statement", guard));
        for call in src.calls_to(def, test_name) {
            out.push(wrapped || has_ancestor_kind(call, "try_statement", def));
        }
    }
    out
}

fn random_use() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b(?:np\.random|numpy\.random|random)\.(\w+)\s*\(|\bfrom\s+random\s+import\b|\bdefault_rng\(\s*\)")
            .expect("regex")
    })
}

fn random_seed() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b(?:np\.random|numpy\.random|random)\.seed\s*\(|\bdefault_rng\(\s*[^)\s]|\bRandom\(\s*[^)\s]|\bmanual_seed\s*\(")
            .expect("regex")
    })
}

/// True when the script draws random numbers without seeding anywhere.
pub fn unseeded_random(script_text: &str) -> bool {
    let code: String = script_text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .collect::<Vec<_>>()
        .join("\n");
    let uses = random_use()
        .captures_iter(&code)
        .any(|c| c.get(1).is_none_or(|m| m.as_str() != "seed"));
    uses && !random_seed().is_match(&code)
}

/// Prompts for a tested script, regenerating until the checks and the
/// seeding lint pass or the budget runs out.
pub fn generate_tests(
    script: &EvalScript,
    original: &FunctionRecord,
    gateway: &Gateway,
    settings: &TestSettings,
) -> StageResult<EvalScript> {
    let test_name = script.expected_test_name();
    let cache_dir = cache_dir_for(&script.example_id);
    let mut last = String::from("no attempts");
    let mut fingerprints = script.fingerprints.clone();
    for attempt in 0..settings.regenerations {
        let exchange = match gateway.ask(
            TemplateId::Testgen,
            &[
                ("func_name", &script.target_name),
                ("test_func_name", &test_name),
                ("code", &script.script_text),
                ("docker_CACHE_DIR", &cache_dir),
            ],
            &settings.decode.clone().sample(attempt as u32),
        ) {
            Ok(e) => e,
            Err(e) => {
                return Err(Dropped {
                    example_id: script.example_id.clone(),
                    stage: "gentests".into(),
                    reason: "provider-error".into(),
                    detail: e.to_string(),
                })
            }
        };
        fingerprints.push(exchange.fingerprint.clone());
        let Ok(text) = exchange.code() else {
            last = "no-code-block".into();
            continue;
        };
        let report = test_sanity_check(
            text,
            original,
            script.sandboxed_tokens,
            &settings.limits,
            settings.min_asserts,
        );
        if !report.overall {
            last = report.reason().unwrap_or("unknown").to_string();
            debug!(example = %script.example_id, attempt, "test sanity failure: {last}");
            continue;
        }
        if unseeded_random(text) {
            last = "unseeded-random".into();
            continue;
        }
        return Ok(EvalScript {
            stage: Stage::Tested,
            script_text: text.to_string(),
            test_func_name: test_name,
            test_count: Some(report.assert_count),
            fingerprints,
            ..script.clone()
        });
    }
    Err(Dropped {
        example_id: script.example_id.clone(),
        stage: "gentests".into(),
        reason: "testgen-sanity".into(),
        detail: last,
    })
}
