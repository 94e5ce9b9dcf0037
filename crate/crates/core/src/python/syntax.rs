//! Tree-sitter backed structural queries over Python source.

use std::ops::Range;

use thiserror::Error;
use tree_sitter::{Node, Parser, Tree};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error("parse: syntax error near line {line}")]
    Invalid { line: usize },
    #[error("parse: parser unavailable")]
    Parser,
}

/// A parsed Python module. The tree never outlives its text.
pub struct PySource {
    text: String,
    tree: Tree,
}

impl std::fmt::Debug for PySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PySource").field("len", &self.text.len()).finish()
    }
}

/// Location of a function definition inside a module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionSite {
    pub name: String,
    pub class_name: Option<String>,
    /// Byte range of the `def` itself, decorators excluded.
    pub def_range: Range<usize>,
    /// Byte range including decorators.
    pub full_range: Range<usize>,
    /// 1-based inclusive line span of `full_range`.
    pub lines: (usize, usize),
    /// Column of the first byte of `full_range`.
    pub column: usize,
}

/// Location of a top-level class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSite {
    pub name: String,
    pub full_range: Range<usize>,
    pub lines: (usize, usize),
    pub methods: Vec<FunctionSite>,
}

pub fn parser() -> Result<Parser, SyntaxError> {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_python::LANGUAGE.into())
        .map_err(|_| SyntaxError::Parser)?;
    Ok(parser)
}

impl PySource {
    pub fn parse(text: impl Into<String>) -> Result<Self, SyntaxError> {
        let text = text.into();
        let tree = parser()?.parse(&text, None).ok_or(SyntaxError::Parser)?;
        if tree.root_node().has_error() {
            let line = first_error_line(tree.root_node()).unwrap_or(1);
            return Err(SyntaxError::Invalid { line });
        }
        Ok(Self { text, tree })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn root(&self) -> Node<'_> {
        self.tree.root_node()
    }

    pub fn node_text(&self, node: Node<'_>) -> &str {
        &self.text[node.byte_range()]
    }

    /// Top-level functions in file order. Nested functions are not listed.
    pub fn top_level_functions(&self) -> Vec<FunctionSite> {
        let mut out = Vec::new();
        for child in named_children(self.root()) {
            if let Some(site) = self.function_site(child, None) {
                out.push(site);
            }
        }
        out
    }

    pub fn classes(&self) -> Vec<ClassSite> {
        let mut out = Vec::new();
        for child in named_children(self.root()) {
            let (outer, class) = match child.kind() {
                "class_definition" => (child, child),
                "decorated_definition" => match child.child_by_field_name("definition") {
                    Some(def) if def.kind() == "class_definition" => (child, def),
                    _ => continue,
                },
                _ => continue,
            };
            let name = self.field_text(class, "name").unwrap_or_default().to_string();
            let mut methods = Vec::new();
            if let Some(body) = class.child_by_field_name("body") {
                for item in named_children(body) {
                    if let Some(site) = self.function_site(item, Some(&name)) {
                        methods.push(site);
                    }
                }
            }
            out.push(ClassSite {
                name,
                full_range: outer.byte_range(),
                lines: line_span(outer),
                methods,
            });
        }
        out
    }

    /// Every eligible target: top-level functions and class methods.
    pub fn all_functions(&self) -> Vec<FunctionSite> {
        let mut out = self.top_level_functions();
        for class in self.classes() {
            out.extend(class.methods);
        }
        out.sort_by_key(|s| s.full_range.start);
        out
    }

    pub fn find_function(&self, name: &str, class_name: Option<&str>) -> Option<FunctionSite> {
        match class_name {
            None => self
                .top_level_functions()
                .into_iter()
                .rev()
                .find(|f| f.name == name),
            Some(cls) => self
                .classes()
                .into_iter()
                .rev()
                .find(|c| c.name == cls)
                .and_then(|c| c.methods.into_iter().rev().find(|m| m.name == name)),
        }
    }

    /// Node for a function site (the `function_definition`, decorators excluded).
    pub fn def_node(&self, site: &FunctionSite) -> Option<Node<'_>> {
        self.root()
            .descendant_for_byte_range(site.def_range.start, site.def_range.end)
            .and_then(|n| climb_to(n, "function_definition", &site.def_range))
    }

    pub fn field_text(&self, node: Node<'_>, field: &str) -> Option<&str> {
        node.child_by_field_name(field).map(|n| self.node_text(n))
    }

    fn function_site(&self, node: Node<'_>, class_name: Option<&str>) -> Option<FunctionSite> {
        let (outer, def) = match node.kind() {
            "function_definition" => (node, node),
            "decorated_definition" => {
                let def = node.child_by_field_name("definition")?;
                if def.kind() != "function_definition" {
                    return None;
                }
                (node, def)
            }
            _ => return None,
        };
        Some(FunctionSite {
            name: self.field_text(def, "name")?.to_string(),
            class_name: class_name.map(str::to_string),
            def_range: def.byte_range(),
            full_range: outer.byte_range(),
            lines: line_span(outer),
            column: outer.start_position().column,
        })
    }

    /// The `if __name__ == "__main__":` block, if any (the last one wins).
    pub fn main_guard(&self) -> Option<Node<'_>> {
        named_children(self.root())
            .into_iter()
            .filter(|n| n.kind() == "if_statement")
            .rfind(|n| {
                n.child_by_field_name("condition")
                    .is_some_and(|c| self.is_main_condition(c))
            })
    }

    fn is_main_condition(&self, cond: Node<'_>) -> bool {
        let cond = unwrap_parens(cond);
        if cond.kind() != "comparison_operator" {
            return false;
        }
        let parts: Vec<_> = named_children(cond);
        if parts.len() != 2 {
            return false;
        }
        let texts: Vec<String> = parts
            .iter()
            .map(|p| self.node_text(*p).replace('\'', "\""))
            .collect();
        let op_is_eq = (0..cond.child_count())
            .filter_map(|i| cond.child(i))
            .any(|c| !c.is_named() && c.kind() == "==");
        op_is_eq
            && ((texts[0] == "__name__" && texts[1] == "\"__main__\"")
                || (texts[1] == "__name__" && texts[0] == "\"__main__\""))
    }

    /// Calls whose callee is `name` or `<expr>.name`, within `scope`.
    pub fn calls_to<'t>(&'t self, scope: Node<'t>, name: &str) -> Vec<Node<'t>> {
        descendants(scope)
            .into_iter()
            .filter(|n| n.kind() == "call")
            .filter(|n| {
                n.child_by_field_name("function")
                    .is_some_and(|f| self.callee_name(f) == Some(name))
            })
            .collect()
    }

    fn callee_name<'t>(&'t self, callee: Node<'t>) -> Option<&'t str> {
        match callee.kind() {
            "identifier" => Some(self.node_text(callee)),
            "attribute" => self.field_text(callee, "attribute"),
            _ => None,
        }
    }

    /// True if `name` appears as an identifier (or attribute name) under `scope`.
    pub fn references(&self, scope: Node<'_>, name: &str) -> bool {
        descendants(scope)
            .into_iter()
            .any(|n| n.kind() == "identifier" && self.node_text(n) == name)
    }

    pub fn count_kind(&self, scope: Node<'_>, kind: &str) -> usize {
        descendants(scope)
            .into_iter()
            .filter(|n| n.kind() == kind)
            .count()
    }
}

pub fn named_children(node: Node<'_>) -> Vec<Node<'_>> {
    let mut cursor = node.walk();
    node.named_children(&mut cursor).collect()
}

pub fn children(node: Node<'_>) -> Vec<Node<'_>> {
    let mut cursor = node.walk();
    node.children(&mut cursor).collect()
}

/// Pre-order list of all descendants of `node`, itself included.
pub fn descendants(node: Node<'_>) -> Vec<Node<'_>> {
    let mut out = Vec::new();
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        out.push(n);
        let mut kids = children(n);
        kids.reverse();
        stack.extend(kids);
    }
    out
}

pub fn has_ancestor_kind(node: Node<'_>, kind: &str, stop: Node<'_>) -> bool {
    let mut cur = node.parent();
    while let Some(p) = cur {
        if p.id() == stop.id() {
            return false;
        }
        if p.kind() == kind {
            return true;
        }
        cur = p.parent();
    }
    false
}

pub fn line_span(node: Node<'_>) -> (usize, usize) {
    let start = node.start_position().row + 1;
    let mut end = node.end_position().row + 1;
    // a node ending at column 0 stops on the previous line
    if node.end_position().column == 0 && end > start {
        end -= 1;
    }
    (start, end)
}

fn unwrap_parens(mut node: Node<'_>) -> Node<'_> {
    while node.kind() == "parenthesized_expression" {
        match node.named_child(0) {
            Some(inner) => node = inner,
            None => break,
        }
    }
    node
}

fn climb_to<'t>(mut node: Node<'t>, kind: &str, range: &Range<usize>) -> Option<Node<'t>> {
    loop {
        if node.kind() == kind && node.byte_range() == *range {
            return Some(node);
        }
        node = node.parent()?;
    }
}

fn first_error_line(node: Node<'_>) -> Option<usize> {
    descendants(node)
        .into_iter()
        .find(|n| n.is_error() || n.is_missing())
        .map(|n| n.start_position().row + 1)
}

/// Removes `column` leading whitespace characters from every line after the
/// first; lines with shallower indentation are kept verbatim.
pub fn dedent_from(text: &str, column: usize) -> String {
    if column == 0 {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if i == 0 {
            out.push_str(line);
            continue;
        }
        let ws = line
            .bytes()
            .take(column)
            .take_while(|b| *b == b' ' || *b == b'\t')
            .count();
        if ws == column {
            out.push_str(&line[column..]);
        } else {
            out.push_str(line);
        }
    }
    out
}

/// Prefixes every non-empty line with `indent`.
pub fn indent(text: &str, indent: &str) -> String {
    text.split_inclusive('\n')
        .map(|line| {
            if line.trim().is_empty() {
                line.to_string()
            } else {
                format!("{indent}{line}")
            }
        })
        .collect()
}

/// Text of a function site, dedented so it parses as a module.
pub fn site_text(src: &PySource, site: &FunctionSite, with_decorators: bool) -> String {
    let range = if with_decorators {
        site.full_range.clone()
    } else {
        site.def_range.clone()
    };
    let column = if with_decorators {
        site.column
    } else {
        src.def_node(site)
            .map(|n| n.start_position().column)
            .unwrap_or(site.column)
    };
    dedent_from(&src.text()[range], column)
}
