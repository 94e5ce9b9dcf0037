//! Final keep/drop decision: tree equality of the target, then LLM
//! verdicts on functionality and test correctness.

use serde::{Deserialize, Serialize};
use tree_sitter::Node;

use crate::ingest::{FunctionRecord, Split};
use crate::llm::{DecodeParams, Gateway, LlmError, TemplateId};
use crate::python::PySource;
use crate::script::{find_target, EvalScript};

/// Canonical s-expression of a subtree: node kinds plus the text of every
/// leaf, with comments and other extras left out.
pub fn normalized_tree(src: &PySource, node: Node<'_>) -> String {
    let mut out = String::new();
    write_tree(src, node, &mut out);
    out
}

fn write_tree(src: &PySource, node: Node<'_>, out: &mut String) {
    if node.is_extra() {
        return;
    }
    out.push('(');
    out.push_str(node.kind());
    if node.child_count() == 0 {
        out.push(' ');
        out.push_str(&format!("{:?}", src.node_text(node)));
    } else {
        let mut cursor = node.walk();
        for child in node.children(&mut cursor) {
            if !child.is_extra() {
                out.push(' ');
                write_tree(src, child, out);
            }
        }
    }
    out.push(')');
}

/// Normalized tree of the named function (decorators excluded), or of the
/// first function when the name is absent.
fn function_tree(text: &str, name: &str, class: Option<&str>) -> Option<String> {
    let src = PySource::parse(text.to_string()).ok()?;
    let site = find_target(&src, name, class).or_else(|| src.all_functions().into_iter().next())?;
    let node = src.def_node(&site)?;
    Some(normalized_tree(&src, node))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstComparison {
    pub equal: bool,
    /// Set to "parse" when either side failed to parse.
    pub reason: Option<&'static str>,
}

/// True iff both definitions have identical normalized syntax trees.
pub fn ast_equivalent(original: &str, sandboxed: &str, name: &str, class: Option<&str>) -> AstComparison {
    match (function_tree(original, name, class), function_tree(sandboxed, name, class)) {
        (Some(a), Some(b)) => AstComparison {
            equal: a == b,
            reason: None,
        },
        _ => AstComparison {
            equal: false,
            reason: Some("parse"),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmEquiv {
    Same,
    Yes,
    No,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmTest {
    Yes,
    No,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "lowercase")]
pub enum Decision {
    Keep,
    Drop(String),
}

impl Decision {
    pub fn is_keep(&self) -> bool {
        matches!(self, Decision::Keep)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityVerdict {
    pub ast_equal: bool,
    pub llm_equiv: LlmEquiv,
    pub llm_test: LlmTest,
    pub decision: Decision,
}

/// The keep rule. Eval keeps only tree-equal targets; train also accepts
/// an LLM "same"/"yes". Both require the test check to say yes.
pub fn decide(split: Split, ast_equal: bool, llm_equiv: LlmEquiv, llm_test: LlmTest) -> Decision {
    let functional = ast_equal
        || (split == Split::Train && matches!(llm_equiv, LlmEquiv::Same | LlmEquiv::Yes));
    if !functional {
        return Decision::Drop(if split == Split::Eval { "ast" } else { "llm-equiv" }.into());
    }
    if llm_test != LlmTest::Yes {
        return Decision::Drop("llm-test".into());
    }
    Decision::Keep
}

pub fn llm_functionality_check(
    original: &FunctionRecord,
    script: &EvalScript,
    gateway: &Gateway,
    decode: &DecodeParams,
) -> Result<(LlmEquiv, String), LlmError> {
    let ex = gateway.ask(
        TemplateId::FuncEquivCheck,
        &[
            ("func_name", &script.target_name),
            ("orig_func", &original.body_text),
            ("new_code", &script.script_text),
        ],
        decode,
    )?;
    let verdict = match ex.answer(&["same", "yes", "no"]).as_deref() {
        Ok("same") => LlmEquiv::Same,
        Ok("yes") => LlmEquiv::Yes,
        _ => LlmEquiv::No,
    };
    Ok((verdict, ex.fingerprint))
}

pub fn llm_test_check(
    script: &EvalScript,
    gateway: &Gateway,
    decode: &DecodeParams,
) -> Result<(LlmTest, String), LlmError> {
    let ex = gateway.ask(
        TemplateId::TestCorrectCheck,
        &[
            ("func_name", &script.target_name),
            ("test_func_name", &script.test_func_name),
            ("code", &script.script_text),
        ],
        decode,
    )?;
    let verdict = match ex.answer(&["yes", "no"]).as_deref() {
        Ok("yes") => LlmTest::Yes,
        _ => LlmTest::No,
    };
    Ok((verdict, ex.fingerprint))
}

/// Runs the checks in order, skipping LLM calls whose answer cannot change
/// the outcome. Fingerprints of the calls made are appended to `trace`.
pub fn gate(
    original: &FunctionRecord,
    script: &EvalScript,
    split: Split,
    gateway: &Gateway,
    decode: &DecodeParams,
    trace: &mut Vec<String>,
) -> Result<QualityVerdict, LlmError> {
    let sandboxed = script.target_text().unwrap_or_default();
    let ast_equal = ast_equivalent(
        &original.body_text,
        &sandboxed,
        &script.target_name,
        script.target_class.as_deref(),
    )
    .equal;
    let mut llm_equiv = LlmEquiv::Skipped;
    if !ast_equal && split == Split::Train {
        let (v, fp) = llm_functionality_check(original, script, gateway, decode)?;
        trace.push(fp);
        llm_equiv = v;
    }
    let mut llm_test = LlmTest::Skipped;
    if decide(split, ast_equal, llm_equiv, LlmTest::Yes).is_keep() {
        let (v, fp) = llm_test_check(script, gateway, decode)?;
        trace.push(fp);
        llm_test = v;
    }
    Ok(QualityVerdict {
        ast_equal,
        llm_equiv,
        llm_test,
        decision: decide(split, ast_equal, llm_equiv, llm_test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const F: &str = "def f(x, y=2):\n    \"\"\"Doc.\"\"\"\n    total = x + y  # add\n    return total\n";

    fn eq(a: &str, b: &str) -> AstComparison {
        ast_equivalent(a, b, "f", None)
    }

    #[test]
    fn formatting_and_comments_are_ignored() {
        let reformatted = "def f(x,   y = 2):\n\n    \"\"\"Doc.\"\"\"\n\n    total = (x\n             + y)\n    return total\n";
        assert!(!eq(F, reformatted).equal, "parentheses are part of the tree");
        let spaced = "def f( x , y=2 ) :\n  \"\"\"Doc.\"\"\"\n  total = x + y\n\n  # note\n  return total\n";
        assert!(eq(F, spaced).equal);
    }

    #[test]
    fn extra_statement_and_rename_differ() {
        let extra = F.replace("    return total\n", "    print(total)\n    return total\n");
        assert!(!eq(F, &extra).equal);
        let renamed = F.replace("total", "s");
        assert!(!eq(F, &renamed).equal);
        let no_doc = F.replace("    \"\"\"Doc.\"\"\"\n", "");
        assert!(!eq(F, &no_doc).equal);
    }

    #[test]
    fn parse_failure_is_reported() {
        let c = eq(F, "def f(:\n");
        assert!(!c.equal);
        assert_eq!(c.reason, Some("parse"));
    }

    #[test]
    fn surrounding_code_and_indentation_do_not_matter() {
        let script = "import os\n\nclass K:\n    def f(x, y=2):\n        \"\"\"Doc.\"\"\"\n        total = x + y\n        return total\n";
        assert!(ast_equivalent(F, script, "f", Some("K")).equal);
    }

    #[test]
    fn decision_table() {
        use LlmEquiv as E;
        use LlmTest as T;
        assert_eq!(decide(Split::Eval, true, E::Skipped, T::Yes), Decision::Keep);
        assert_eq!(decide(Split::Eval, false, E::Yes, T::Yes), Decision::Drop("ast".into()));
        assert_eq!(decide(Split::Train, false, E::Yes, T::Yes), Decision::Keep);
        assert_eq!(decide(Split::Train, false, E::No, T::Yes), Decision::Drop("llm-equiv".into()));
        assert_eq!(decide(Split::Train, true, E::Skipped, T::No), Decision::Drop("llm-test".into()));
        assert_eq!(decide(Split::Eval, true, E::Skipped, T::No), Decision::Drop("llm-test".into()));
    }

    #[test]
    fn decision_serializes_with_reason() {
        assert_eq!(
            serde_json::to_string(&Decision::Drop("ast".into())).unwrap(),
            r#"{"decision":"drop","reason":"ast"}"#
        );
        assert_eq!(serde_json::to_string(&Decision::Keep).unwrap(), r#"{"decision":"keep"}"#);
    }
}
