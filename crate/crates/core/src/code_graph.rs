//! Repo-local symbol resolution and dependency closures.
//!
//! Resolution is static and over-approximate. A definition depends on every
//! repo-local symbol it names (calls, decorators, defaults, base classes,
//! global reads), following import aliases and module attribute chains.
//! Classes are always taken whole.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fs;
use std::path::Path;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};
use tracing::warn;
use tree_sitter::Node;

use crate::error::{Error, Result};
use crate::ingest::{module_name, python_files, FunctionRecord};
use crate::python::syntax::{descendants, named_children, site_text, PySource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolKind {
    Function,
    Class,
    Global,
    ImportAlias,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinitionSite {
    pub file_path: String,
    pub line_span: (usize, usize),
    pub kind: SymbolKind,
    pub text: String,
}

/// What an import alias (or module attribute) refers to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "kebab-case")]
pub enum AliasTarget {
    Module(String),
    /// `name` looked up in a repo-local `module` (may be a re-export).
    Member { module: String, name: String },
    External(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct References {
    names: BTreeSet<String>,
    chains: BTreeSet<Vec<String>>,
    attrs: BTreeSet<String>,
    /// `(module, name)` pairs imported inside the definition body.
    local_imports: BTreeSet<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ImportStmt {
    text: String,
    line: usize,
    aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct MethodSite {
    class: String,
    name: String,
    file_path: String,
    /// Line span relative to the file.
    line_span: (usize, usize),
    text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolTable {
    pub definitions: BTreeMap<String, DefinitionSite>,
    /// file_path → alias → target.
    pub imports: BTreeMap<String, BTreeMap<String, AliasTarget>>,
    /// module → (file_path, parseable).
    modules: BTreeMap<String, (String, bool)>,
    packages: BTreeSet<String>,
    refs: BTreeMap<String, References>,
    import_stmts: BTreeMap<String, Vec<ImportStmt>>,
    methods: BTreeMap<String, MethodSite>,
    class_methods: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FragmentKind {
    Import,
    Placeholder,
    Global,
    Class,
    Function,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub file_path: String,
    pub kind: FragmentKind,
    pub qualified_name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyClosure {
    pub target: FunctionRecord,
    pub fragments: Vec<Fragment>,
    pub standalone: bool,
    pub degraded: bool,
}

impl DependencyClosure {
    /// Qualified names of the repo-local symbols in the closure, target included.
    pub fn symbols(&self) -> BTreeSet<String> {
        self.fragments
            .iter()
            .filter(|f| !matches!(f.kind, FragmentKind::Import | FragmentKind::Placeholder))
            .map(|f| f.qualified_name.clone())
            .collect()
    }

    pub fn target_fragment(&self) -> &Fragment {
        self.fragments.last().expect("closure always holds its target")
    }

    /// Every fragment except the target, labeled by file.
    pub fn context_text(&self) -> String {
        render_fragments(&self.fragments[..self.fragments.len() - 1])
    }

    /// All fragment texts joined, as one would paste them together.
    pub fn concatenated(&self) -> String {
        self.fragments
            .iter()
            .map(|f| f.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Renders fragments grouped by consecutive file, each group headed by a
/// `# file: <path>` comment.
pub fn render_fragments(fragments: &[Fragment]) -> String {
    let mut out = String::new();
    let mut current: Option<&str> = None;
    for f in fragments {
        if current != Some(f.file_path.as_str()) {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("# file: {}\n", f.file_path));
            current = Some(&f.file_path);
        }
        out.push_str(f.text.trim_end());
        out.push_str("\n\n");
    }
    out.trim_end().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Resolved {
    Symbol(String),
    Module(String),
    Unparseable(String),
    External,
}

const MAX_REEXPORT_DEPTH: usize = 8;

/// Parses every Python file under `root` and indexes repo-local symbols.
pub fn build_symbol_table(root: &Path) -> Result<SymbolTable> {
    let mut sources = Vec::new();
    for (rel, path) in python_files(root) {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        sources.push((rel, text));
    }
    build_symbol_table_from_sources(&sources)
}

pub fn build_symbol_table_from_sources(sources: &[(String, String)]) -> Result<SymbolTable> {
    let mut table = SymbolTable::default();
    let mut parsed = Vec::new();
    for (rel, text) in sources {
        let module = module_name(rel);
        match PySource::parse(text.clone()) {
            Ok(src) => {
                table.modules.insert(module.clone(), (rel.clone(), true));
                parsed.push((rel.clone(), module, src));
            }
            Err(e) => {
                warn!(file = %rel, "unparseable file: {e}");
                table.modules.insert(module, (rel.clone(), false));
            }
        }
    }
    if parsed.is_empty() {
        return Err(Error::EmptyRepo);
    }
    for module in table.modules.keys() {
        let parts: Vec<&str> = module.split('.').collect();
        for i in 1..parts.len() {
            table.packages.insert(parts[..i].join("."));
        }
    }
    for (rel, module, src) in &parsed {
        table.index_module(rel, module, src);
    }
    Ok(table)
}

impl SymbolTable {
    fn module_exists(&self, module: &str) -> bool {
        self.modules.contains_key(module) || self.packages.contains(module)
    }

    fn module_parseable(&self, module: &str) -> bool {
        match self.modules.get(module) {
            Some((_, ok)) => *ok,
            None => self.packages.contains(module),
        }
    }

    fn index_module(&mut self, rel: &str, module: &str, src: &PySource) {
        let is_package = rel.ends_with("__init__.py");
        let mut aliases = BTreeMap::new();
        let mut stmts = Vec::new();
        for node in named_children(src.root()) {
            match node.kind() {
                "import_statement" | "import_from_statement" => {
                    let bound = self.import_bindings(src, node, module, is_package);
                    stmts.push(ImportStmt {
                        text: src.node_text(node).to_string(),
                        line: node.start_position().row + 1,
                        aliases: bound.iter().map(|(a, _)| a.clone()).collect(),
                    });
                    aliases.extend(bound);
                }
                "function_definition" | "decorated_definition" | "class_definition" => {
                    let def = if node.kind() == "decorated_definition" {
                        match node.child_by_field_name("definition") {
                            Some(d) => d,
                            None => continue,
                        }
                    } else {
                        node
                    };
                    let Some(name) = src.field_text(def, "name") else {
                        continue;
                    };
                    let kind = if def.kind() == "class_definition" {
                        SymbolKind::Class
                    } else {
                        SymbolKind::Function
                    };
                    let qualified = format!("{module}.{name}");
                    self.refs
                        .insert(qualified.clone(), collect_refs(src, node, module, is_package, self));
                    self.definitions.insert(
                        qualified,
                        DefinitionSite {
                            file_path: rel.to_string(),
                            line_span: crate::python::syntax::line_span(node),
                            kind,
                            text: src.node_text(node).to_string(),
                        },
                    );
                }
                "expression_statement" => {
                    let Some(assign) = node.named_child(0).filter(|n| n.kind() == "assignment")
                    else {
                        continue;
                    };
                    let Some(left) = assign.child_by_field_name("left") else {
                        continue;
                    };
                    let targets: Vec<String> = if left.kind() == "identifier" {
                        vec![src.node_text(left).to_string()]
                    } else if matches!(left.kind(), "pattern_list" | "tuple_pattern") {
                        named_children(left)
                            .into_iter()
                            .filter(|n| n.kind() == "identifier")
                            .map(|n| src.node_text(n).to_string())
                            .collect()
                    } else {
                        Vec::new()
                    };
                    let refs = collect_refs(src, node, module, is_package, self);
                    for name in targets {
                        let qualified = format!("{module}.{name}");
                        let mut own = refs.clone();
                        own.names.remove(&name);
                        self.refs.insert(qualified.clone(), own);
                        self.definitions.insert(
                            qualified,
                            DefinitionSite {
                                file_path: rel.to_string(),
                                line_span: crate::python::syntax::line_span(node),
                                kind: SymbolKind::Global,
                                text: src.node_text(node).to_string(),
                            },
                        );
                    }
                }
                _ => {}
            }
        }
        for class in src.classes() {
            let cq = format!("{module}.{}", class.name);
            let names = self.class_methods.entry(cq).or_default();
            for m in &class.methods {
                names.insert(m.name.clone());
            }
            for m in &class.methods {
                let mq = format!("{module}.{}.{}", class.name, m.name);
                self.methods.insert(
                    mq.clone(),
                    MethodSite {
                        class: format!("{module}.{}", class.name),
                        name: m.name.clone(),
                        file_path: rel.to_string(),
                        line_span: m.lines,
                        text: site_text(src, m, true),
                    },
                );
                if let Some(node) = src
                    .root()
                    .descendant_for_byte_range(m.full_range.start, m.full_range.end)
                {
                    let node = climb_to_range(node, &m.full_range);
                    let refs = collect_refs(src, node, module, is_package, self);
                    self.refs.insert(mq, refs);
                }
            }
        }
        self.imports.insert(rel.to_string(), aliases);
        self.import_stmts.insert(rel.to_string(), stmts);
    }

    /// Alias bindings introduced by one import statement.
    fn import_bindings(
        &self,
        src: &PySource,
        node: Node<'_>,
        module: &str,
        is_package: bool,
    ) -> Vec<(String, AliasTarget)> {
        let mut out = Vec::new();
        if node.kind() == "import_statement" {
            for item in named_children(node) {
                match item.kind() {
                    "dotted_name" => {
                        let full = src.node_text(item).to_string();
                        let top = full.split('.').next().unwrap_or(&full).to_string();
                        let target = if self.module_exists(&top) {
                            AliasTarget::Module(top.clone())
                        } else {
                            AliasTarget::External(top.clone())
                        };
                        out.push((top, target));
                    }
                    "aliased_import" => {
                        let (Some(name), Some(alias)) =
                            (src.field_text(item, "name"), src.field_text(item, "alias"))
                        else {
                            continue;
                        };
                        let target = if self.module_exists(name) {
                            AliasTarget::Module(name.to_string())
                        } else {
                            AliasTarget::External(name.to_string())
                        };
                        out.push((alias.to_string(), target));
                    }
                    _ => {}
                }
            }
            return out;
        }
        let Some(base) = node
            .child_by_field_name("module_name")
            .and_then(|m| self.absolute_module(src, m, module, is_package))
        else {
            return out;
        };
        let mut cursor = node.walk();
        for item in node.children_by_field_name("name", &mut cursor) {
            let (name, alias) = match item.kind() {
                "dotted_name" => {
                    let n = src.node_text(item).to_string();
                    (n.clone(), n)
                }
                "aliased_import" => match (src.field_text(item, "name"), src.field_text(item, "alias")) {
                    (Some(n), Some(a)) => (n.to_string(), a.to_string()),
                    _ => continue,
                },
                _ => continue,
            };
            out.push((alias, self.resolve_target(&base, &name)));
        }
        out
    }

    fn resolve_target(&self, base: &str, name: &str) -> AliasTarget {
        let joined = if base.is_empty() {
            name.to_string()
        } else {
            format!("{base}.{name}")
        };
        if self.module_exists(&joined) {
            AliasTarget::Module(joined)
        } else if !base.is_empty() && self.module_exists(base) {
            AliasTarget::Member {
                module: base.to_string(),
                name: name.to_string(),
            }
        } else {
            AliasTarget::External(joined)
        }
    }

    /// Absolute module for the `module_name` of a from-import.
    fn absolute_module(
        &self,
        src: &PySource,
        node: Node<'_>,
        module: &str,
        is_package: bool,
    ) -> Option<String> {
        if node.kind() != "relative_import" {
            return Some(src.node_text(node).to_string());
        }
        let text = src.node_text(node);
        let dots = text.chars().take_while(|c| *c == '.').count();
        let rest = text[dots..].trim();
        let mut parts: Vec<&str> = module.split('.').collect();
        // the package containing this module
        if !is_package {
            parts.pop();
        }
        for _ in 1..dots {
            parts.pop()?;
        }
        if !rest.is_empty() {
            parts.push(rest);
        }
        Some(parts.join("."))
    }

    fn resolve_name(&self, module: &str, file: &str, name: &str) -> Resolved {
        let local = format!("{module}.{name}");
        if self.definitions.contains_key(&local) {
            return Resolved::Symbol(local);
        }
        match self.imports.get(file).and_then(|m| m.get(name)) {
            Some(target) => self.resolve_alias(target, 0),
            None => Resolved::External,
        }
    }

    fn resolve_alias(&self, target: &AliasTarget, depth: usize) -> Resolved {
        match target {
            AliasTarget::Module(m) => Resolved::Module(m.clone()),
            AliasTarget::External(_) => Resolved::External,
            AliasTarget::Member { module, name } => self.resolve_member(module, name, depth),
        }
    }

    fn resolve_member(&self, module: &str, name: &str, depth: usize) -> Resolved {
        let joined = format!("{module}.{name}");
        if self.definitions.contains_key(&joined) {
            return Resolved::Symbol(joined);
        }
        if self.module_exists(&joined) {
            return Resolved::Module(joined);
        }
        if !self.module_parseable(module) {
            return Resolved::Unparseable(joined);
        }
        if depth >= MAX_REEXPORT_DEPTH {
            return Resolved::External;
        }
        let file = match self.modules.get(module) {
            Some((f, _)) => f.clone(),
            None => return Resolved::External,
        };
        match self.imports.get(&file).and_then(|m| m.get(name)) {
            Some(t) => self.resolve_alias(t, depth + 1),
            None => Resolved::External,
        }
    }

    fn resolve_chain(&self, module: &str, file: &str, chain: &[String]) -> Resolved {
        let mut cur = self.resolve_name(module, file, &chain[0]);
        for part in &chain[1..] {
            cur = match cur {
                Resolved::Module(m) => self.resolve_member(&m, part, 0),
                other => return other,
            };
        }
        cur
    }

    fn site_of(&self, qualified: &str) -> Option<(String, String)> {
        if let Some(d) = self.definitions.get(qualified) {
            return Some((module_name(&d.file_path), d.file_path.clone()));
        }
        self.methods
            .get(qualified)
            .map(|m| (module_name(&m.file_path), m.file_path.clone()))
    }

    /// Direct repo-local dependencies of a symbol (without the untyped-method
    /// rule). Unresolvable local references come back as `Err(name)`.
    fn direct_deps(&self, qualified: &str) -> (BTreeSet<String>, BTreeSet<String>) {
        let mut deps = BTreeSet::new();
        let mut unparseable = BTreeSet::new();
        let Some((module, file)) = self.site_of(qualified) else {
            return (deps, unparseable);
        };
        let Some(refs) = self.refs.get(qualified) else {
            return (deps, unparseable);
        };
        let mut push = |r: Resolved| match r {
            Resolved::Symbol(s) => {
                deps.insert(s);
            }
            Resolved::Unparseable(s) => {
                unparseable.insert(s);
            }
            _ => {}
        };
        for name in &refs.names {
            push(self.resolve_name(&module, &file, name));
        }
        for chain in &refs.chains {
            push(self.resolve_chain(&module, &file, chain));
        }
        for (m, n) in &refs.local_imports {
            push(self.resolve_member(m, n, 0));
        }
        if let Some(method) = self.methods.get(qualified) {
            deps.insert(method.class.clone());
        }
        deps.remove(qualified);
        (deps, unparseable)
    }

    /// The pure reference-edge relation over every indexed symbol.
    pub fn reference_edges(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.definitions
            .keys()
            .chain(self.methods.keys())
            .map(|q| (q.clone(), self.direct_deps(q).0))
            .collect()
    }

    pub fn contains(&self, qualified: &str) -> bool {
        self.definitions.contains_key(qualified) || self.methods.contains_key(qualified)
    }

    fn text_of(&self, qualified: &str) -> Option<(String, (usize, usize), String)> {
        if let Some(d) = self.definitions.get(qualified) {
            return Some((d.file_path.clone(), d.line_span, d.text.clone()));
        }
        self.methods
            .get(qualified)
            .map(|m| (m.file_path.clone(), m.line_span, m.text.clone()))
    }

    fn kind_of(&self, qualified: &str) -> FragmentKind {
        match self.definitions.get(qualified).map(|d| d.kind) {
            Some(SymbolKind::Class) => FragmentKind::Class,
            Some(SymbolKind::Global) => FragmentKind::Global,
            _ => FragmentKind::Function,
        }
    }
}

fn climb_to_range<'t>(mut node: Node<'t>, range: &std::ops::Range<usize>) -> Node<'t> {
    while node.byte_range() != *range {
        match node.parent() {
            Some(p) => node = p,
            None => break,
        }
    }
    node
}

const PARAM_KINDS: &[&str] = &[
    "parameters",
    "lambda_parameters",
    "default_parameter",
    "typed_parameter",
    "typed_default_parameter",
    "list_splat_pattern",
    "dictionary_splat_pattern",
];

fn collect_refs(
    src: &PySource,
    node: Node<'_>,
    module: &str,
    is_package: bool,
    table: &SymbolTable,
) -> References {
    let mut refs = References::default();
    for n in descendants(node) {
        match n.kind() {
            "identifier" => {
                let Some(parent) = n.parent() else { continue };
                let is_field = |field: &str| {
                    parent
                        .child_by_field_name(field)
                        .is_some_and(|c| c.id() == n.id())
                };
                match parent.kind() {
                    "attribute" if is_field("attribute") => {
                        refs.attrs.insert(src.node_text(n).to_string());
                        continue;
                    }
                    "keyword_argument" if is_field("name") => continue,
                    "function_definition" | "class_definition" if is_field("name") => continue,
                    "default_parameter" | "typed_default_parameter" if !is_field("name") => {}
                    k if PARAM_KINDS.contains(&k) => continue,
                    "dotted_name" | "aliased_import" => continue,
                    _ => {}
                }
                refs.names.insert(src.node_text(n).to_string());
            }
            "attribute" => {
                // only outermost chains of plain identifiers
                if n.parent().is_some_and(|p| {
                    p.kind() == "attribute"
                        && p.child_by_field_name("object").is_some_and(|o| o.id() == n.id())
                }) {
                    continue;
                }
                if let Some(chain) = attribute_chain(src, n) {
                    refs.chains.insert(chain);
                }
            }
            "import_from_statement" if n.id() != node.id() => {
                if let Some(base) = n
                    .child_by_field_name("module_name")
                    .and_then(|m| table.absolute_module(src, m, module, is_package))
                {
                    let mut cursor = n.walk();
                    for item in n.children_by_field_name("name", &mut cursor) {
                        let name = match item.kind() {
                            "dotted_name" => Some(src.node_text(item)),
                            "aliased_import" => src.field_text(item, "name"),
                            _ => None,
                        };
                        if let Some(name) = name {
                            refs.local_imports.insert((base.clone(), name.to_string()));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    refs
}

/// `a.b.c` as `["a", "b", "c"]` when the base is a plain identifier.
fn attribute_chain(src: &PySource, node: Node<'_>) -> Option<Vec<String>> {
    let mut parts = Vec::new();
    let mut cur = node;
    loop {
        match cur.kind() {
            "attribute" => {
                parts.push(src.field_text(cur, "attribute")?.to_string());
                cur = cur.child_by_field_name("object")?;
            }
            "identifier" => {
                parts.push(src.node_text(cur).to_string());
                break;
            }
            _ => return None,
        }
    }
    parts.reverse();
    Some(parts)
}

/// Computes the transitive repo-local dependency closure of `target`.
pub fn dependency_closure(target: &FunctionRecord, table: &SymbolTable) -> Result<DependencyClosure> {
    let root = target.qualified_name.clone();
    if !table.contains(&root) {
        return Err(Error::UnknownSymbol(root));
    }
    let mut included: BTreeSet<String> = BTreeSet::new();
    let mut unparseable: BTreeSet<String> = BTreeSet::new();
    let mut edges: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut frontier = vec![root.clone()];
    loop {
        while let Some(sym) = frontier.pop() {
            if !included.insert(sym.clone()) {
                continue;
            }
            let (deps, bad) = table.direct_deps(&sym);
            unparseable.extend(bad);
            for d in &deps {
                if !included.contains(d) {
                    frontier.push(d.clone());
                }
            }
            edges.insert(sym, deps);
        }
        // untyped `obj.m()` calls: pull in classes that define `m` and are
        // named somewhere in the included fragments
        let mut attrs = BTreeSet::new();
        let mut names = BTreeSet::new();
        for sym in &included {
            if let Some(r) = table.refs.get(sym) {
                attrs.extend(r.attrs.iter().cloned());
                names.extend(r.names.iter().cloned());
            }
        }
        for (class, methods) in &table.class_methods {
            if included.contains(class) {
                continue;
            }
            let simple = class.rsplit('.').next().unwrap_or(class);
            if names.contains(simple) && methods.iter().any(|m| attrs.contains(m)) {
                frontier.push(class.clone());
                // record the edge from every fragment naming the class
                for sym in &included {
                    if table.refs.get(sym).is_some_and(|r| r.names.contains(simple)) {
                        edges.entry(sym.clone()).or_default().insert(class.clone());
                    }
                }
            }
        }
        if frontier.is_empty() {
            break;
        }
    }

    let order = ordered_symbols(table, &root, &included, &edges);
    let target_class = table.methods.get(&root).map(|m| m.class.clone());

    let mut fragments = Vec::new();
    let mut seen_imports = BTreeSet::new();
    for sym in &order {
        let Some((file, _, _)) = table.text_of(sym) else { continue };
        let used: BTreeSet<&String> = table
            .refs
            .get(sym)
            .map(|r| r.names.iter().collect())
            .unwrap_or_default();
        for stmt in table.import_stmts.get(&file).into_iter().flatten() {
            if stmt.aliases.iter().any(|a| used.contains(a)) && seen_imports.insert(stmt.text.clone())
            {
                fragments.push(Fragment {
                    file_path: file.clone(),
                    kind: FragmentKind::Import,
                    qualified_name: format!("{}:import:{}", file, stmt.line),
                    text: stmt.text.clone(),
                });
            }
        }
    }
    for bad in &unparseable {
        let file = table
            .modules
            .get(bad.rsplit_once('.').map(|(m, _)| m).unwrap_or(bad))
            .map(|(f, _)| f.clone())
            .unwrap_or_default();
        fragments.push(Fragment {
            file_path: file,
            kind: FragmentKind::Placeholder,
            qualified_name: bad.clone(),
            text: format!("# unavailable: {bad} (source file could not be parsed)"),
        });
    }
    for sym in &order {
        let Some((file, _, text)) = table.text_of(sym) else { continue };
        let (kind, text) = if *sym == root {
            (FragmentKind::Target, target.body_text.clone())
        } else if Some(sym) == target_class.as_ref() {
            (FragmentKind::Class, remove_method(&text, table.methods.get(&root)))
        } else {
            (table.kind_of(sym), text)
        };
        fragments.push(Fragment {
            file_path: file,
            kind,
            qualified_name: sym.clone(),
            text,
        });
    }
    let standalone = !fragments.iter().any(|f| {
        !matches!(f.kind, FragmentKind::Import | FragmentKind::Target)
    });
    Ok(DependencyClosure {
        target: target.clone(),
        fragments,
        standalone,
        degraded: !unparseable.is_empty(),
    })
}

/// Sort key: the target last, then file, start line and name.
type ComponentKey = (bool, String, usize, String);

/// Dependency-before-dependent order; strongly connected groups stay
/// together in file order, and the target comes last.
fn ordered_symbols(
    table: &SymbolTable,
    root: &str,
    included: &BTreeSet<String>,
    edges: &BTreeMap<String, BTreeSet<String>>,
) -> Vec<String> {
    let key = |s: &String| -> ComponentKey {
        let (file, span, _) = table.text_of(s).unwrap_or_default();
        (s == root, file, span.0, s.clone())
    };
    let mut nodes: Vec<String> = included.iter().cloned().collect();
    nodes.sort_by_key(|s| key(s));
    let mut graph: DiGraph<String, ()> = DiGraph::new();
    let index: HashMap<String, NodeIndex> = nodes
        .iter()
        .map(|s| (s.clone(), graph.add_node(s.clone())))
        .collect();
    for (from, tos) in edges {
        for to in tos {
            if let (Some(a), Some(b)) = (index.get(from), index.get(to)) {
                graph.add_edge(*a, *b, ());
            }
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut comp_of = HashMap::new();
    let mut members: Vec<Vec<String>> = Vec::new();
    for (ci, comp) in sccs.iter().enumerate() {
        let mut names: Vec<String> = comp.iter().map(|n| graph[*n].clone()).collect();
        names.sort_by_key(|s| key(s));
        for n in comp {
            comp_of.insert(*n, ci);
        }
        members.push(names);
    }
    // pending dependency counts per component
    let mut pending = vec![0usize; members.len()];
    let mut dependents: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); members.len()];
    for e in graph.edge_indices() {
        let (a, b) = graph.edge_endpoints(e).expect("edge");
        let (ca, cb) = (comp_of[&a], comp_of[&b]);
        if ca != cb && dependents[cb].insert(ca) {
            pending[ca] += 1;
        }
    }
    let comp_key = |c: usize| key(&members[c][0]);
    let mut ready: BinaryHeap<Reverse<(ComponentKey, usize)>> = (0..members.len())
        .filter(|c| pending[*c] == 0)
        .map(|c| Reverse((comp_key(c), c)))
        .collect();
    let mut out = Vec::new();
    while let Some(Reverse((_, c))) = ready.pop() {
        out.extend(members[c].iter().cloned());
        for d in dependents[c].clone() {
            pending[d] -= 1;
            if pending[d] == 0 {
                ready.push(Reverse((comp_key(d), d)));
            }
        }
    }
    out
}

/// Class text with one method's lines removed.
fn remove_method(class_text: &str, method: Option<&MethodSite>) -> String {
    let Some(method) = method else {
        return class_text.to_string();
    };
    let src = match PySource::parse(class_text.to_string()) {
        Ok(s) => s,
        Err(_) => return class_text.to_string(),
    };
    let class_name = method.class.rsplit('.').next().unwrap_or("");
    let Some(site) = src.find_function(&method.name, Some(class_name)) else {
        return class_text.to_string();
    };
    let lines: Vec<&str> = class_text.split_inclusive('\n').collect();
    let (start, end) = site.lines;
    let mut out: String = lines
        .iter()
        .enumerate()
        .filter(|(i, _)| *i + 1 < start || *i + 1 > end)
        .map(|(_, l)| *l)
        .collect();
    // a class whose only method was removed still needs a body
    let empty_body = match PySource::parse(out.clone()) {
        Ok(parsed) => parsed.classes().iter().all(|c| c.name != class_name)
            || named_children(parsed.root()).iter().any(|n| {
                let def = if n.kind() == "decorated_definition" {
                    n.child_by_field_name("definition")
                } else {
                    Some(*n)
                };
                def.and_then(|d| d.child_by_field_name("body"))
                    .is_some_and(|b| b.named_child_count() == 0)
            }),
        Err(_) => true,
    };
    if empty_body {
        let pad = " ".repeat(site.column);
        out = lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if i + 1 == start {
                    format!("{pad}pass\n")
                } else if i + 1 > start && i < end {
                    String::new()
                } else {
                    l.to_string()
                }
            })
            .collect();
    }
    out.trim_end().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{extract_functions, CurationPolicy, RepoSnapshot, Split};

    fn table(files: &[(&str, &str)]) -> SymbolTable {
        let sources: Vec<(String, String)> = files
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        build_symbol_table_from_sources(&sources).unwrap()
    }

    fn record(files: &[(&str, &str)], qualified: &str) -> FunctionRecord {
        let dir = tempfile::tempdir().unwrap();
        for (rel, text) in files {
            let p = dir.path().join(rel);
            fs::create_dir_all(p.parent().unwrap()).unwrap();
            fs::write(p, text).unwrap();
        }
        let snap = RepoSnapshot {
            repo_id: "t".into(),
            origin: String::new(),
            license_tag: "MIT".into(),
            created_at: chrono::NaiveDate::from_ymd_opt(2023, 6, 1).unwrap(),
            byte_size: 0,
            revision: String::new(),
            split: Split::Train,
        };
        extract_functions(&snap, dir.path(), &CurationPolicy::default())
            .records
            .into_iter()
            .find(|r| r.qualified_name == qualified)
            .unwrap()
    }

    #[test]
    fn indexes_definitions_and_aliases() {
        let t = table(&[
            ("utils/io.py", "def load(p):\n    return p\n"),
            (
                "app.py",
                "import numpy as np\nfrom utils.io import load as ld\n\nLIMIT = 3\n\ndef g():\n    return ld(LIMIT)\n",
            ),
        ]);
        assert_eq!(t.definitions["app.g"].kind, SymbolKind::Function);
        assert_eq!(t.definitions["app.LIMIT"].kind, SymbolKind::Global);
        assert_eq!(
            t.imports["app.py"]["ld"],
            AliasTarget::Member {
                module: "utils.io".into(),
                name: "load".into()
            }
        );
        assert_eq!(t.imports["app.py"]["np"], AliasTarget::External("numpy".into()));
        let edges = t.reference_edges();
        assert_eq!(
            edges["app.g"],
            ["app.LIMIT", "utils.io.load"].iter().map(|s| s.to_string()).collect()
        );
    }

    #[test]
    fn empty_repo_is_an_error() {
        let err = build_symbol_table_from_sources(&[("x.py".into(), "def (:\n".into())]);
        assert!(matches!(err, Err(Error::EmptyRepo)));
    }

    const CHAIN: &[(&str, &str)] = &[(
        "m.py",
        "def f(x):\n    return g(x) + 1\n\n\ndef h(x):\n    return x * 2\n\n\ndef g(x):\n    return h(x)\n",
    )];

    #[test]
    fn transitive_chain_is_ordered_dependencies_first() {
        let t = table(CHAIN);
        let c = dependency_closure(&record(CHAIN, "m.f"), &t).unwrap();
        let names: Vec<_> = c.fragments.iter().map(|f| f.qualified_name.as_str()).collect();
        assert_eq!(names, ["m.h", "m.g", "m.f"]);
        assert!(!c.standalone);
        assert_eq!(c.target_fragment().kind, FragmentKind::Target);
        let again = dependency_closure(&record(CHAIN, "m.f"), &t).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn arithmetic_function_is_standalone() {
        let files = &[("m.py", "import math\n\ndef area(r):\n    return math.pi * r ** 2\n")];
        let c = dependency_closure(&record(files, "m.area"), &table(files)).unwrap();
        assert!(c.standalone);
        assert_eq!(c.fragments.len(), 2);
        assert_eq!(c.fragments[0].kind, FragmentKind::Import);
        assert_eq!(c.fragments[0].text, "import math");
    }

    #[test]
    fn class_is_included_whole_and_once() {
        let files = &[(
            "m.py",
            "class C:\n    def m(self):\n        return 1\n\n    def n(self):\n        return 2\n\n\ndef f():\n    c = C()\n    return c.m() + C().n()\n",
        )];
        let c = dependency_closure(&record(files, "m.f"), &table(files)).unwrap();
        let classes: Vec<_> = c.fragments.iter().filter(|f| f.kind == FragmentKind::Class).collect();
        assert_eq!(classes.len(), 1);
        assert!(classes[0].text.contains("def m(self)") && classes[0].text.contains("def n(self)"));
    }

    #[test]
    fn method_target_pulls_its_class_without_itself() {
        let files = &[(
            "m.py",
            "class C:\n    def a(self):\n        return 1\n\n    def b(self):\n        return self.a() + 1\n",
        )];
        let c = dependency_closure(&record(files, "m.C.b"), &table(files)).unwrap();
        assert_eq!(c.fragments.len(), 2);
        assert!(c.fragments[0].text.contains("def a"));
        assert!(!c.fragments[0].text.contains("def b"));
        assert!(!c.standalone);
        let files = &[("m.py", "class C:\n    def only(self):\n        return 1\n")];
        let c = dependency_closure(&record(files, "m.C.only"), &table(files)).unwrap();
        assert_eq!(c.fragments[0].text, "class C:\n    pass");
    }

    #[test]
    fn mutual_recursion_is_grouped_with_target_last() {
        let files = &[(
            "p.py",
            "def is_even(n):\n    return True if n == 0 else is_odd(n - 1)\n\n\ndef is_odd(n):\n    return False if n == 0 else is_even(n - 1)\n",
        )];
        let c = dependency_closure(&record(files, "p.is_odd"), &table(files)).unwrap();
        let names: Vec<_> = c.fragments.iter().map(|f| f.qualified_name.as_str()).collect();
        assert_eq!(names, ["p.is_even", "p.is_odd"]);
    }

    #[test]
    fn relative_and_module_imports_resolve() {
        let files = &[
            ("pkg/__init__.py", ""),
            ("pkg/a.py", "def base():\n    return 1\n"),
            ("pkg/b.py", "from . import a\nfrom .a import base as bb\n\ndef top():\n    return a.base() + bb()\n"),
        ];
        let t = table(files);
        let edges = t.reference_edges();
        assert_eq!(edges["pkg.b.top"], ["pkg.a.base".to_string()].into_iter().collect());
    }

    #[test]
    fn unparseable_dependency_degrades_closure() {
        let files = &[
            ("broken.py", "def helper(:\n"),
            ("user.py", "from broken import helper\n\ndef use(x):\n    return helper(x)\n"),
        ];
        let t = table(files);
        let c = dependency_closure(&record(files, "user.use"), &t).unwrap();
        assert!(c.degraded);
        assert!(c.fragments.iter().any(|f| f.kind == FragmentKind::Placeholder));
        assert!(!c.standalone);
    }

    #[test]
    fn parameters_and_keywords_are_not_references() {
        let files = &[(
            "m.py",
            "def size(x):\n    return 1\n\n\ndef f(size, obj):\n    return g(size=size) + obj.size\n\n\ndef g(size):\n    return size\n",
        )];
        let edges = table(files).reference_edges();
        // `size` is read as a name inside f's body, which over-approximates to m.size
        assert!(edges["m.f"].contains("m.g"));
        assert!(edges["m.g"].contains("m.size"));
        let files = &[("m.py", "def size():\n    return 1\n\n\ndef f(obj, size=3):\n    return obj.size\n")];
        let edges = table(files).reference_edges();
        assert!(edges["m.f"].is_empty());
    }
}
