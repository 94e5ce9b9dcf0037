use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Sandbox,
    Testgen,
    Debug,
    CoverageImprove,
    FuncEquivCheck,
    TestCorrectCheck,
    /// Candidate generation for evaluation and rejection sampling.
    Generate,
    /// One self-repair round for a failed candidate.
    Repair,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::Sandbox,
        TemplateId::Testgen,
        TemplateId::Debug,
        TemplateId::CoverageImprove,
        TemplateId::FuncEquivCheck,
        TemplateId::TestCorrectCheck,
        TemplateId::Generate,
        TemplateId::Repair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Sandbox => "sandbox",
            TemplateId::Testgen => "testgen",
            TemplateId::Debug => "debug",
            TemplateId::CoverageImprove => "coverage_improve",
            TemplateId::FuncEquivCheck => "func_equiv_check",
            TemplateId::TestCorrectCheck => "test_correct_check",
            TemplateId::Generate => "generate",
            TemplateId::Repair => "repair",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            TemplateId::Sandbox => include_str!("../../templates/sandbox.txt"),
            TemplateId::Testgen => include_str!("../../templates/testgen.txt"),
            TemplateId::Debug => include_str!("../../templates/debug.txt"),
            TemplateId::CoverageImprove => include_str!("../../templates/coverage_improve.txt"),
            TemplateId::FuncEquivCheck => include_str!("../../templates/func_equiv_check.txt"),
            TemplateId::TestCorrectCheck => include_str!("../../templates/test_correct_check.txt"),
            TemplateId::Generate => include_str!("../../templates/generate.txt"),
            TemplateId::Repair => include_str!("../../templates/repair.txt"),
        }
    }

    pub fn placeholders(self) -> BTreeSet<&'static str> {
        scan(self.text()).into_iter().map(|(_, name)| name).collect()
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template {s:?}"))
    }
}

/// `{identifier}` occurrences with their byte offsets.
fn scan(text: &str) -> Vec<(usize, &str)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            if j > start && j < bytes.len() && bytes[j] == b'}' && !bytes[start].is_ascii_digit() {
                out.push((i, &text[start..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Substitutes every placeholder in one pass; bound values are never rescanned.
pub fn render(id: TemplateId, bindings: &[(&str, &str)]) -> Result<String, LlmError> {
    let text = id.text();
    let mut out = String::with_capacity(text.len() + 256);
    let mut last = 0;
    for (pos, name) in scan(text) {
        let value = bindings
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| LlmError::Unbound(name.to_string()))?;
        out.push_str(&text[last..pos]);
        out.push_str(value);
        last = pos + name.len() + 2;
    }
    out.push_str(&text[last..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholder_sets() {
        let p = |t: TemplateId| t.placeholders().into_iter().collect::<Vec<_>>();
        assert_eq!(p(TemplateId::Sandbox), ["code", "context", "docker_CACHE_DIR", "func_name"]);
        assert_eq!(
            p(TemplateId::Debug),
            ["code", "docker_CACHE_DIR", "err_msg", "func_name", "test_func_name"]
        );
        assert_eq!(p(TemplateId::FuncEquivCheck), ["func_name", "new_code", "orig_func"]);
    }

    #[test]
    fn sandbox_render_substitutes_literally() {
        let out = render(
            TemplateId::Sandbox,
            &[
                ("func_name", "f"),
                ("code", "def f(): pass"),
                ("context", ""),
                ("docker_CACHE_DIR", "/cache"),
            ],
        )
        .unwrap();
        assert!(out.contains("```python\ndef f(): pass\n```"));
        assert!(out.contains("use `/cache` as the directory"));
        assert!(out.starts_with("Instructions:\n- You're given a piece of PYTHON CODE"));
    }

    #[test]
    fn testgen_names_the_test_function() {
        let out = render(
            TemplateId::Testgen,
            &[
                ("func_name", "parse"),
                ("test_func_name", "test_parse"),
                ("code", "x"),
                ("docker_CACHE_DIR", "/c"),
            ],
        )
        .unwrap();
        assert!(out.contains("a test function called test_parse to check"));
        assert!(!out.contains("{test_func_name}"));
        assert!(out.contains("another implentation of the parse function called parse_new_implementation"));
    }

    #[test]
    fn unbound_placeholder_is_named() {
        let err = render(
            TemplateId::Debug,
            &[
                ("func_name", "f"),
                ("test_func_name", "test_f"),
                ("code", "x"),
                ("docker_CACHE_DIR", "/c"),
            ],
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "unbound: err_msg");
    }

    #[test]
    fn bound_values_are_not_rescanned() {
        let out = render(
            TemplateId::FuncEquivCheck,
            &[("func_name", "f"), ("orig_func", "{new_code}"), ("new_code", "{x}")],
        )
        .unwrap();
        assert!(out.contains("ORIGINAL FUNCTION:\n{new_code}\n"));
    }

    #[test]
    fn template_ids_round_trip() {
        for t in TemplateId::ALL {
            assert_eq!(t.as_str().parse::<TemplateId>().unwrap(), t);
        }
    }
}
