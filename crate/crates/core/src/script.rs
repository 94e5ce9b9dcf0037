//! The evaluation script as it moves through the pipeline stages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::python::{count_tokens, FunctionSite, PySource};
use crate::python::syntax::site_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sandboxed,
    Tested,
    Debugged,
    CoverageImproved,
    Final,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Sandboxed => "sandboxed",
            Stage::Tested => "tested",
            Stage::Debugged => "debugged",
            Stage::CoverageImproved => "coverage_improved",
            Stage::Final => "final",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Stage::Sandboxed,
            Stage::Tested,
            Stage::Debugged,
            Stage::CoverageImproved,
            Stage::Final,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScript {
    pub example_id: String,
    pub stage: Stage,
    pub script_text: String,
    pub target_name: String,
    /// Enclosing class when the target is a method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<String>,
    #[serde(default)]
    pub test_func_name: String,
    #[serde(default)]
    pub install_commands: Vec<String>,
    #[serde(default)]
    pub coverage_rate: Option<f64>,
    #[serde(default)]
    pub test_count: Option<usize>,
    /// Token count of the script accepted at the sandboxed stage.
    #[serde(default)]
    pub sandboxed_tokens: usize,
    /// Replay fingerprints of every exchange that shaped this script.
    #[serde(default)]
    pub fingerprints: Vec<String>,
}

impl EvalScript {
    pub fn new_implementation_name(&self) -> String {
        new_implementation_name(&self.target_name)
    }

    pub fn expected_test_name(&self) -> String {
        format!("test_{}", self.target_name)
    }

    /// The sandboxed target's definition text, decorators included.
    pub fn target_text(&self) -> Option<String> {
        let src = PySource::parse(self.script_text.clone()).ok()?;
        let site = find_target(&src, &self.target_name, self.target_class.as_deref())?;
        Some(site_text(&src, &site, true))
    }
}

pub fn new_implementation_name(target: &str) -> String {
    format!("{target}_new_implementation")
}

/// An example removed from the pipeline, with a machine-readable reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub example_id: String,
    pub stage: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

pub type StageResult<T> = Result<T, Dropped>;

/// Definition of the target in a script: inside its class when it is a
/// method, otherwise top level; any definition of that name as a fallback.
pub fn find_target(src: &PySource, name: &str, class: Option<&str>) -> Option<FunctionSite> {
    src.find_function(name, class)
        .or_else(|| src.all_functions().into_iter().rev().find(|f| f.name == name))
}

/// Lexical tokens of a function definition with decorators excluded.
pub fn def_tokens(src: &PySource, site: &FunctionSite) -> Option<usize> {
    count_tokens(&site_text(src, site, false)).ok()
}

/// Token count of a standalone definition text (decorators excluded).
pub fn body_tokens(text: &str, name: &str) -> Option<usize> {
    let src = PySource::parse(text.to_string()).ok()?;
    let site = find_target(&src, name, None)?;
    def_tokens(&src, &site)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_order_and_names() {
        assert!(Stage::Sandboxed < Stage::Tested && Stage::CoverageImproved < Stage::Final);
        assert_eq!("coverage_improved".parse::<Stage>().unwrap(), Stage::CoverageImproved);
        assert_eq!(serde_json::to_string(&Stage::Final).unwrap(), "\"final\"");
    }

    #[test]
    fn body_tokens_skip_decorators() {
        assert_eq!(body_tokens("@cache\ndef f(): return 1\n", "f"), Some(7));
    }

    #[test]
    fn method_targets_are_found_in_their_class() {
        let src = PySource::parse(
            "def area():\n    return 0\n\nclass R:\n    def area(self):\n        return 1\n",
        )
        .unwrap();
        assert_eq!(find_target(&src, "area", Some("R")).unwrap().class_name.as_deref(), Some("R"));
        assert_eq!(find_target(&src, "area", None).unwrap().class_name, None);
    }
}
