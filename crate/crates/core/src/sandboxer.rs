//! Turns a dependency closure into one self-contained script.

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::code_graph::DependencyClosure;
use crate::llm::{DecodeParams, Gateway, TemplateId};
use crate::python::{count_tokens, PySource};
use crate::script::{body_tokens, def_tokens, find_target, Dropped, EvalScript, Stage, StageResult};

/// Token-delta tolerances for the sanity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanityLimits {
    pub target_delta: usize,
    pub script_delta: usize,
}

impl Default for SanityLimits {
    fn default() -> Self {
        Self {
            target_delta: 20,
            script_delta: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SandboxFailure {
    Parse,
    TargetMissing,
    TargetShrunk,
    ScriptShrunk,
}

impl SandboxFailure {
    pub fn tag(self) -> &'static str {
        match self {
            SandboxFailure::Parse => "parse",
            SandboxFailure::TargetMissing => "target-missing",
            SandboxFailure::TargetShrunk => "target-shrunk",
            SandboxFailure::ScriptShrunk => "script-shrunk",
        }
    }
}

/// Checks a sandboxed script against the original target and its closure.
pub fn sandbox_sanity_check(
    script_text: &str,
    closure: &DependencyClosure,
    limits: &SanityLimits,
) -> Result<(), SandboxFailure> {
    let target = &closure.target;
    let src = PySource::parse(script_text.to_string()).map_err(|_| SandboxFailure::Parse)?;
    let site = find_target(&src, target.name(), target.class_name())
        .ok_or(SandboxFailure::TargetMissing)?;
    let original = body_tokens(&target.body_text, target.name()).unwrap_or(target.token_count);
    let sandboxed = def_tokens(&src, &site).ok_or(SandboxFailure::Parse)?;
    if sandboxed + limits.target_delta < original {
        return Err(SandboxFailure::TargetShrunk);
    }
    let script = count_tokens(script_text).map_err(|_| SandboxFailure::Parse)?;
    let closure_total = count_tokens(&closure.concatenated()).unwrap_or(0);
    if script + limits.script_delta < closure_total {
        return Err(SandboxFailure::ScriptShrunk);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxSettings {
    pub regenerations: usize,
    pub limits: SanityLimits,
    pub decode: DecodeParams,
}

impl Default for SandboxSettings {
    fn default() -> Self {
        Self {
            regenerations: 3,
            limits: SanityLimits::default(),
            decode: DecodeParams::default(),
        }
    }
}

/// Logical cache directory an example's script may write to.
pub fn cache_dir_for(example_id: &str) -> String {
    format!("{}/{example_id}", crate::exec_env::CACHE_ROOT)
}

/// Prompts for a sandboxed script, regenerating until one passes the
/// sanity checks or the budget runs out.
pub fn sandbox(
    closure: &DependencyClosure,
    gateway: &Gateway,
    settings: &SandboxSettings,
) -> StageResult<EvalScript> {
    let target = &closure.target;
    let example_id = target.example_id();
    let cache_dir = cache_dir_for(&example_id);
    let code = closure.target_fragment().text.clone();
    let context = closure.context_text();
    let mut last = String::from("no attempts");
    let mut fingerprints = Vec::new();
    for attempt in 0..settings.regenerations {
        let exchange = gateway.ask(
            TemplateId::Sandbox,
            &[
                ("func_name", target.name()),
                ("code", &code),
                ("context", &context),
                ("docker_CACHE_DIR", &cache_dir),
            ],
            &settings.decode.clone().sample(attempt as u32),
        );
        let exchange = match exchange {
            Ok(e) => e,
            Err(e) => {
                return Err(Dropped {
                    example_id,
                    stage: "sandbox".into(),
                    reason: "provider-error".into(),
                    detail: e.to_string(),
                })
            }
        };
        fingerprints.push(exchange.fingerprint.clone());
        let script = match exchange.code() {
            Ok(c) => c.to_string(),
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        match sandbox_sanity_check(&script, closure, &settings.limits) {
            Ok(()) => {
                let sandboxed_tokens = count_tokens(&script).unwrap_or(0);
                return Ok(EvalScript {
                    example_id,
                    stage: Stage::Sandboxed,
                    script_text: script,
                    target_name: target.name().to_string(),
                    target_class: target.class_name().map(str::to_string),
                    test_func_name: String::new(),
                    install_commands: Vec::new(),
                    coverage_rate: None,
                    test_count: None,
                    sandboxed_tokens,
                    fingerprints,
                });
            }
            Err(f) => {
                debug!(%example_id, attempt, "sandbox sanity failure: {}", f.tag());
                last = f.tag().to_string();
            }
        }
    }
    Err(Dropped {
        example_id,
        stage: "sandbox".into(),
        reason: "sandbox-sanity".into(),
        detail: last,
    })
}
