//! Lowering of a function body to a [`Cfg`].

use std::collections::{HashMap, HashSet, VecDeque};

use tree_sitter::Node as TsNode;

use super::{Cfg, CfgError, Edge, EscapeMode, Node, NodeKind, Polarity};
use crate::extraction::{FunctionRecord, RecordKind, SourceSpan};
use crate::summaries::HintsFile;
use crate::syntax::{self, is_access_path, named_children, normalize_expr, squash_whitespace, text};

/// How calls are classified while lowering.
pub trait CallResolver {
    fn is_allocator(&self, callee: &str) -> bool;
    /// Argument indices released by a call to `callee`.
    fn freed_args(&self, callee: &str) -> Vec<usize>;
    fn is_sink(&self, _callee: &str) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Primitives {
    pub alloc: Vec<String>,
    pub free: Vec<String>,
}

impl Default for Primitives {
    fn default() -> Self {
        Primitives {
            alloc: ["malloc", "calloc", "realloc", "strdup", "aligned_alloc", "new"].map(String::from).to_vec(),
            free: ["free", "delete"].map(String::from).to_vec(),
        }
    }
}

impl Primitives {
    pub fn is_alloc(&self, name: &str) -> bool {
        self.alloc.iter().any(|a| a == name)
    }

    pub fn is_free(&self, name: &str) -> bool {
        self.free.iter().any(|a| a == name)
    }
}

impl CallResolver for Primitives {
    fn is_allocator(&self, callee: &str) -> bool {
        self.is_alloc(callee)
    }

    fn freed_args(&self, callee: &str) -> Vec<usize> {
        if self.is_free(callee) {
            vec![0]
        } else {
            Vec::new()
        }
    }
}

/// Primitives plus a fixed summary set and ownership-sink list.
pub struct SummaryResolver<'a> {
    pub primitives: &'a Primitives,
    pub hints: &'a HintsFile,
    pub sinks: &'a [String],
}

impl CallResolver for SummaryResolver<'_> {
    fn is_allocator(&self, callee: &str) -> bool {
        self.primitives.is_alloc(callee) || self.hints.is_allocator(callee)
    }

    fn freed_args(&self, callee: &str) -> Vec<usize> {
        let mut v = self.primitives.freed_args(callee);
        for i in self.hints.freed_args(callee) {
            if !v.contains(&i) {
                v.push(i);
            }
        }
        v
    }

    fn is_sink(&self, callee: &str) -> bool {
        self.sinks.iter().any(|s| s == callee)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub share_conditions: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { share_conditions: true }
    }
}

type Exit = (usize, Polarity);
type Frontier = Vec<Exit>;

const CONSTANT_VALUES: &[&str] = &["NULL", "nullptr", "true", "false", "TRUE", "FALSE", "0"];

struct Lowerer<'s, 'r> {
    src: &'s str,
    file: String,
    line_offset: u32,
    resolver: &'r dyn CallResolver,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    locals: HashSet<String>,
    pending_gotos: HashMap<String, Frontier>,
    seen_labels: HashSet<String>,
    breaks: Vec<Frontier>,
    continues: Vec<Frontier>,
    next_label: Option<String>,
    temps: usize,
    diagnostics: Vec<String>,
    /// Sink arguments held back until the success arm of an `if`.
    deferred_sinks: Option<Vec<(String, SourceSpan)>>,
}

impl<'s> Lowerer<'s, '_> {
    fn span(&self, n: TsNode<'_>) -> SourceSpan {
        crate::extraction::parse::span_of(n, &self.file, self.line_offset)
    }

    fn add(&mut self, kind: NodeKind, at: TsNode<'_>, f: Frontier) -> Frontier {
        let span = self.span(at);
        let id = self.push(kind, span, f);
        vec![(id, Polarity::Unconditional)]
    }

    fn push(&mut self, kind: NodeKind, span: SourceSpan, f: Frontier) -> usize {
        let id = self.nodes.len();
        let mut node = Node::new(kind, span);
        node.label = self.next_label.take();
        self.nodes.push(node);
        self.connect(&f, id);
        id
    }

    fn connect(&mut self, f: &Frontier, to: usize) {
        for &(from, polarity) in f {
            self.edges.push(Edge { from, to, polarity });
        }
    }

    fn branch(&mut self, cond: String, at: TsNode<'_>, f: Frontier) -> (Frontier, Frontier) {
        let span = self.span(at);
        let id = self.push(NodeKind::Branch { cond }, span, f);
        (vec![(id, Polarity::True)], vec![(id, Polarity::False)])
    }

    fn fresh_temp(&mut self) -> String {
        let t = format!("$t{}", self.temps);
        self.temps += 1;
        self.locals.insert(t.clone());
        t
    }

    fn t(&self, n: TsNode<'_>) -> &'s str {
        text(n, self.src)
    }

    fn is_local_lvalue(&self, lhs: &str) -> bool {
        syntax::is_identifier(lhs) && self.locals.contains(lhs)
    }

    // ---- statements ----

    fn stmt(&mut self, n: TsNode<'_>, f: Frontier) -> Frontier {
        match n.kind() {
            "compound_statement" | "translation_unit" | "declaration_list" => {
                let mut f = f;
                for c in named_children(n) {
                    f = self.stmt(c, f);
                }
                f
            }
            "comment" | "preproc_call" | "preproc_def" | "preproc_include" | "type_definition" | "empty_statement" => f,
            "expression_statement" => match n.named_child(0) {
                Some(e) => self.effects(e, f),
                None => f,
            },
            "declaration" => self.declaration(n, f),
            "return_statement" => self.ret(n, f),
            "if_statement" => self.if_stmt(n, f),
            "while_statement" => self.while_stmt(n, f),
            "for_statement" => self.for_stmt(n, f),
            "for_range_loop" => self.range_for(n, f),
            "do_statement" => self.do_stmt(n, f),
            "switch_statement" => self.switch_stmt(n, f),
            "break_statement" => match self.breaks.last_mut() {
                Some(b) => {
                    b.extend(f);
                    Vec::new()
                }
                None => {
                    self.diagnostics.push(format!("line {}: break outside loop or switch", self.span(n).start_line));
                    f
                }
            },
            "continue_statement" => match self.continues.last_mut() {
                Some(c) => {
                    c.extend(f);
                    Vec::new()
                }
                None => f,
            },
            "goto_statement" => {
                let label = n.child_by_field_name("label").map(|l| self.t(l).to_string()).unwrap_or_default();
                if self.seen_labels.contains(&label) {
                    self.diagnostics.push(format!("line {}: backward goto {label} ignored", self.span(n).start_line));
                    f
                } else {
                    self.pending_gotos.entry(label).or_default().extend(f);
                    Vec::new()
                }
            }
            "labeled_statement" => {
                let label = n.child_by_field_name("label").map(|l| self.t(l).to_string()).unwrap_or_default();
                let mut f = f;
                f.extend(self.pending_gotos.remove(&label).unwrap_or_default());
                self.seen_labels.insert(label.clone());
                self.next_label = Some(label);
                let inner = named_children(n).into_iter().filter(|c| c.kind() != "statement_identifier").collect::<Vec<_>>();
                for c in inner {
                    f = self.stmt(c, f);
                }
                if self.next_label.is_some() {
                    // Label on an empty statement: keep it visible as a join node.
                    let label_node = self.add(NodeKind::Other, n, f);
                    self.next_label = None;
                    return label_node;
                }
                f
            }
            "preproc_ifdef" | "preproc_if" | "preproc_elif" | "preproc_elifdef" => self.preproc(n, f),
            "preproc_else" => {
                let mut f = f;
                for c in named_children(n) {
                    f = self.stmt(c, f);
                }
                f
            }
            "try_statement" => {
                self.diagnostics.push(format!("line {}: exception handlers not modeled", self.span(n).start_line));
                match n.child_by_field_name("body") {
                    Some(b) => self.stmt(b, f),
                    None => f,
                }
            }
            "function_definition" => f,
            _ => self.effects(n, f),
        }
    }

    fn preproc(&mut self, n: TsNode<'_>, f: Frontier) -> Frontier {
        let cond = match n.kind() {
            "preproc_ifdef" | "preproc_elifdef" => {
                let name = n.child_by_field_name("name").map(|x| self.t(x)).unwrap_or("?");
                let directive = self.t(n).trim_start().trim_start_matches('#').trim_start();
                let negated = directive.starts_with("ifndef") || directive.starts_with("elifndef");
                format!("{}defined({name})", if negated { "!" } else { "" })
            }
            _ => n.child_by_field_name("condition").map(|c| squash_whitespace(self.t(c))).unwrap_or_else(|| "?".into()),
        };
        self.diagnostics.push(format!("line {}: conditional compilation modeled as branch on {cond}", self.span(n).start_line));
        let alt = n.child_by_field_name("alternative");
        let skip: Vec<usize> = [n.child_by_field_name("name"), n.child_by_field_name("condition"), alt]
            .into_iter()
            .flatten()
            .map(|x| x.id())
            .collect();
        let (t, e) = self.branch(cond, n, f);
        let mut t = t;
        for c in named_children(n) {
            if !skip.contains(&c.id()) {
                t = self.stmt(c, t);
            }
        }
        let e = match alt {
            Some(a) => self.stmt(a, e),
            None => e,
        };
        t.into_iter().chain(e).collect()
    }

    fn declaration(&mut self, n: TsNode<'_>, f: Frontier) -> Frontier {
        let mut f = f;
        let mut cursor = n.walk();
        let decls: Vec<TsNode<'_>> = n.children_by_field_name("declarator", &mut cursor).collect();
        for d in decls {
            if d.kind() != "init_declarator" {
                continue;
            }
            let Some(name) = d.child_by_field_name("declarator").and_then(crate::extraction::parse::declarator_name) else {
                continue;
            };
            let name = self.t(name).to_string();
            self.locals.insert(name.clone());
            if let Some(value) = d.child_by_field_name("value") {
                if matches!(value.kind(), "argument_list" | "initializer_list") {
                    f = self.effects(value, f);
                } else {
                    f = self.assign(name, true, value, d, f);
                }
            }
        }
        f
    }

    fn ret(&mut self, n: TsNode<'_>, f: Frontier) -> Frontier {
        let mut f = f;
        let mut value = None;
        if let Some(e) = n.named_child(0).filter(|c| c.kind() != "comment") {
            let (v, f2) = self.value(e, f);
            f = f2;
            if is_access_path(&v) && !CONSTANT_VALUES.contains(&v.as_str()) {
                f = self.add(NodeKind::Escape { mode: EscapeMode::ReturnedPointer, var: v.clone() }, n, f);
            }
            value = Some(v);
        }
        self.add(NodeKind::Return { value }, n, f);
        Vec::new()
    }

    fn condition_effects(&mut self, cond: TsNode<'_>, f: Frontier) -> (String, Frontier) {
        let inner = if cond.kind() == "condition_clause" {
            cond.child_by_field_name("value").or_else(|| cond.named_child(0)).unwrap_or(cond)
        } else {
            cond
        };
        let f = if inner.kind() == "declaration" { self.declaration(inner, f) } else { self.effects(inner, f) };
        let text = if inner.kind() == "declaration" {
            inner
                .child_by_field_name("declarator")
                .and_then(crate::extraction::parse::declarator_name)
                .map(|x| self.t(x).to_string())
                .unwrap_or_else(|| self.t(inner).to_string())
        } else {
            self.t(cond).to_string()
        };
        (syntax::strip_outer_parens(&squash_whitespace(&text)).to_string(), f)
    }

    /// Arm on which a sink call used as the whole condition succeeded.
    fn sink_condition(&self, cond: TsNode<'_>) -> Option<Polarity> {
        let inner = if cond.kind() == "condition_clause" { cond.child_by_field_name("value")? } else { cond };
        let mut n = strip_wrappers(inner);
        let mut arm = Polarity::True;
        if n.kind() == "unary_expression" && n.child_by_field_name("operator").is_some_and(|o| self.t(o) == "!") {
            n = strip_wrappers(n.child_by_field_name("argument")?);
            arm = Polarity::False;
        }
        if n.kind() != "call_expression" {
            return None;
        }
        let callee = crate::extraction::parse::direct_callee(n.child_by_field_name("function")?, self.src)?;
        self.resolver.is_sink(&callee).then_some(arm)
    }

    fn if_stmt(&mut self, n: TsNode<'_>, f: Frontier) -> Frontier {
        let Some(cond) = n.child_by_field_name("condition") else { return f };
        let success = self.sink_condition(cond);
        if success.is_some() {
            self.deferred_sinks = Some(Vec::new());
        }
        let (text, f) = self.condition_effects(cond, f);
        let held = self.deferred_sinks.take().unwrap_or_default();
        let (mut t, mut e) = self.branch(text, n, f);
        let arm = if success == Some(Polarity::True) { &mut t } else { &mut e };
        for (var, span) in held {
            let id = self.push(NodeKind::Escape { mode: EscapeMode::SinkCall, var }, span, std::mem::take(arm));
            *arm = vec![(id, Polarity::Unconditional)];
        }
        let t = match n.child_by_field_name("consequence") {
            Some(c) => self.stmt(c, t),
            None => t,
        };
        let e = match n.child_by_field_name("alternative") {
            Some(a) if a.kind() == "else_clause" => {
                let mut e = e;
                for c in named_children(a) {
                    e = self.stmt(c, e);
                }
                e
            }
            Some(a) => self.stmt(a, e),
            None => e,
        };
        t.into_iter().chain(e).collect()
    }

    fn loop_body(&mut self, body: Option<TsNode<'_>>, f: Frontier) -> (Frontier, Frontier, Frontier) {
        self.breaks.push(Vec::new());
        self.continues.push(Vec::new());
        let end = match body {
            Some(b) => self.stmt(b, f),
            None => f,
        };
        let cont = self.continues.pop().unwrap_or_default();
        let brk = self.breaks.pop().unwrap_or_default();
        (end, cont, brk)
    }

    fn while_stmt(&mut self, n: TsNode<'_>, f: Frontier) -> Frontier {
        let (text, f) = match n.child_by_field_name("condition") {
            Some(c) => self.condition_effects(c, f),
            None => ("1".into(), f),
        };
        let (t, e) = self.branch(text, n, f);
        let (end, cont, brk) = self.loop_body(n.child_by_field_name("body"), t);
        end.into_iter().chain(cont).chain(e).chain(brk).collect()
    }

    fn for_stmt(&mut self, n: TsNode<'_>, f: Frontier) -> Frontier {
        let mut f = f;
        if let Some(init) = n.child_by_field_name("initializer") {
            f = if init.kind() == "declaration" { self.declaration(init, f) } else { self.effects(init, f) };
        }
        let (body_in, skip) = match n.child_by_field_name("condition") {
            Some(c) => {
                let (text, f) = self.condition_effects(c, f);
                self.branch(text, n, f)
            }
            None => (f, Vec::new()),
        };
        let (end, cont, brk) = self.loop_body(n.child_by_field_name("body"), body_in);
        let mut after: Frontier = end.into_iter().chain(cont).collect();
        if let Some(u) = n.child_by_field_name("update") {
            after = self.effects(u, after);
        }
        after.into_iter().chain(skip).chain(brk).collect()
    }

    fn range_for(&mut self, n: TsNode<'_>, f: Frontier) -> Frontier {
        let range = n.child_by_field_name("right").map(|r| squash_whitespace(self.t(r))).unwrap_or_default();
        let (t, e) = self.branch(format!("nonempty({range})"), n, f);
        let (end, cont, brk) = self.loop_body(n.child_by_field_name("body"), t);
        end.into_iter().chain(cont).chain(e).chain(brk).collect()
    }

    fn do_stmt(&mut self, n: TsNode<'_>, f: Frontier) -> Frontier {
        let (end, cont, brk) = self.loop_body(n.child_by_field_name("body"), f);
        let mut after: Frontier = end.into_iter().chain(cont).collect();
        if let Some(c) = n.child_by_field_name("condition") {
            after = self.condition_effects(c, after).1;
        }
        after.into_iter().chain(brk).collect()
    }

    fn switch_stmt(&mut self, n: TsNode<'_>, f: Frontier) -> Frontier {
        let (subject, mut test) = match n.child_by_field_name("condition") {
            Some(c) => self.condition_effects(c, f),
            None => return f,
        };
        let subject = crate::syntax::strip_outer_parens(&subject).to_string();
        let cases = n.child_by_field_name("body").map(named_children).unwrap_or_default();
        self.breaks.push(Vec::new());
        let mut fall: Frontier = Vec::new();
        let mut default_node = None;
        for case in cases {
            if case.kind() != "case_statement" {
                fall = self.stmt(case, fall);
                continue;
            }
            let value = case.child_by_field_name("value");
            let mut body_f = match value {
                Some(v) => {
                    let cond = format!("{subject}=={}", squash_whitespace(self.t(v)));
                    let (t, e) = self.branch(cond, case, std::mem::take(&mut test));
                    test = e;
                    t.into_iter().chain(std::mem::take(&mut fall)).collect()
                }
                None => {
                    let span = self.span(case);
                    let id = self.push(NodeKind::Other, span, std::mem::take(&mut fall));
                    default_node = Some(id);
                    vec![(id, Polarity::Unconditional)]
                }
            };
            for s in named_children(case) {
                if Some(s.id()) == value.map(|v| v.id()) {
                    continue;
                }
                body_f = self.stmt(s, body_f);
            }
            fall = body_f;
        }
        let brk = self.breaks.pop().unwrap_or_default();
        let mut exits: Frontier = fall.into_iter().chain(brk).collect();
        match default_node {
            Some(d) => self.connect(&test, d),
            None => exits.extend(test),
        }
        exits
    }

    // ---- expressions ----

    /// Lowers an expression evaluated for its side effects.
    fn effects(&mut self, n: TsNode<'_>, f: Frontier) -> Frontier {
        match n.kind() {
            "assignment_expression" => {
                let (Some(l), Some(r)) = (n.child_by_field_name("left"), n.child_by_field_name("right")) else { return f };
                let op = n.child_by_field_name("operator").map(|o| self.t(o)).unwrap_or("=");
                if op != "=" {
                    return self.effects(r, f);
                }
                let lhs = normalize_expr(l, self.src);
                self.assign(lhs, false, r, n, f)
            }
            "call_expression" => self.call(n, f, None).1,
            "new_expression" => {
                let t = self.fresh_temp();
                self.add(NodeKind::Alloc { target: t, callee: "new".into() }, n, f)
            }
            "delete_expression" => {
                let arg = named_children(n).into_iter().last();
                match arg {
                    Some(a) => {
                        let (v, f) = self.value(a, f);
                        self.add(NodeKind::Free { arg: v, callee: "delete".into() }, n, f)
                    }
                    None => f,
                }
            }
            "pointer_expression" | "field_expression" => {
                let arrow = n.kind() == "pointer_expression" && self.t(n).trim_start().starts_with('*')
                    || n.kind() == "field_expression" && n.child_by_field_name("operator").is_some_and(|o| self.t(o) == "->");
                let f = match n.child_by_field_name("argument") {
                    Some(a) => self.effects(a, f),
                    None => f,
                };
                match n.child_by_field_name("argument") {
                    Some(a) if arrow => {
                        let base = normalize_expr(a, self.src);
                        if is_access_path(&base) {
                            return self.add(NodeKind::Deref { expr: base }, n, f);
                        }
                        f
                    }
                    _ => f,
                }
            }
            "lambda_expression" | "sizeof_expression" | "string_literal" | "number_literal" | "identifier" => f,
            _ => {
                let mut f = f;
                for c in named_children(n) {
                    f = self.effects(c, f);
                }
                f
            }
        }
    }

    /// Lowers an expression whose value is used; returns the value text.
    fn value(&mut self, n: TsNode<'_>, f: Frontier) -> (String, Frontier) {
        let core = strip_wrappers(n);
        match core.kind() {
            "call_expression" => self.call(core, f, None),
            "new_expression" => {
                let t = self.fresh_temp();
                let f = self.add(NodeKind::Alloc { target: t.clone(), callee: "new".into() }, core, f);
                (t, f)
            }
            "assignment_expression" => {
                let f = self.effects(core, f);
                let lhs = core.child_by_field_name("left").map(|l| normalize_expr(l, self.src)).unwrap_or_default();
                (lhs, f)
            }
            _ => {
                let f = self.effects(core, f);
                (normalize_expr(core, self.src), f)
            }
        }
    }

    fn assign(&mut self, lhs: String, declared: bool, rhs: TsNode<'_>, at: TsNode<'_>, f: Frontier) -> Frontier {
        let local = declared || self.is_local_lvalue(&lhs);
        let core = strip_wrappers(rhs);
        let allocating_call = match core.kind() {
            "call_expression" => core
                .child_by_field_name("function")
                .and_then(|c| crate::extraction::parse::direct_callee(c, self.src))
                .is_some_and(|c| self.resolver.is_allocator(&c)),
            "new_expression" => true,
            _ => false,
        };
        let mut f = f;
        if allocating_call {
            f = if core.kind() == "new_expression" {
                self.add(NodeKind::Alloc { target: lhs.clone(), callee: "new".into() }, at, f)
            } else {
                self.call(core, f, Some(lhs.clone())).1
            };
            if !local {
                f = self.add(NodeKind::Escape { mode: EscapeMode::GlobalStore, var: lhs }, at, f);
            }
            return f;
        }
        let (v, f) = self.value(rhs, f);
        if local {
            self.add(NodeKind::Assign { lhs, rhs: v }, at, f)
        } else if is_access_path(&v) && !CONSTANT_VALUES.contains(&v.as_str()) {
            self.add(NodeKind::Escape { mode: EscapeMode::GlobalStore, var: v }, at, f)
        } else {
            f
        }
    }

    fn call(&mut self, n: TsNode<'_>, f: Frontier, target: Option<String>) -> (String, Frontier) {
        let func = n.child_by_field_name("function");
        let callee = func.and_then(|c| crate::extraction::parse::direct_callee(c, self.src));
        let mut f = f;
        if callee.is_none() {
            if let Some(c) = func {
                f = self.effects(c, f);
            }
        }
        let temps_before = self.temps;
        let mut args = Vec::new();
        if let Some(list) = n.child_by_field_name("arguments") {
            for a in named_children(list) {
                if a.kind() == "comment" {
                    continue;
                }
                let (v, f2) = self.value(a, f);
                f = f2;
                args.push(v);
            }
        }
        let arg_temps: Vec<String> = args
            .iter()
            .filter(|a| a.strip_prefix("$t").and_then(|d| d.parse::<usize>().ok()).is_some_and(|k| k >= temps_before))
            .cloned()
            .collect();
        let call_text = squash_whitespace(self.t(n));
        let Some(callee) = callee else {
            let f = self.add(NodeKind::Call { callee: squash_whitespace(func.map(|c| self.t(c)).unwrap_or("?")), args }, n, f);
            return (call_text, f);
        };
        if self.resolver.is_allocator(&callee) {
            let t = target.unwrap_or_else(|| self.fresh_temp());
            let mut f = self.add(NodeKind::Alloc { target: t.clone(), callee }, n, f);
            for tmp in arg_temps {
                f = self.add(NodeKind::Escape { mode: EscapeMode::SinkCall, var: tmp }, n, f);
            }
            return (t, f);
        }
        let freed = self.resolver.freed_args(&callee);
        let mut freed_vals = Vec::new();
        if freed.is_empty() {
            f = self.add(NodeKind::Call { callee: callee.clone(), args: args.clone() }, n, f);
        } else {
            for i in freed {
                if let Some(a) = args.get(i) {
                    freed_vals.push(a.clone());
                    f = self.add(NodeKind::Free { arg: a.clone(), callee: callee.clone() }, n, f);
                }
            }
        }
        if self.resolver.is_sink(&callee) {
            for a in args.iter().filter(|a| is_access_path(a) && !freed_vals.contains(a)) {
                let span = self.span(n);
                if let Some(held) = self.deferred_sinks.as_mut() {
                    held.push((a.clone(), span));
                    continue;
                }
                f = self.add(NodeKind::Escape { mode: EscapeMode::SinkCall, var: a.clone() }, n, f);
            }
        } else {
            for tmp in arg_temps.into_iter().filter(|t| !freed_vals.contains(t)) {
                f = self.add(NodeKind::Escape { mode: EscapeMode::SinkCall, var: tmp }, n, f);
            }
        }
        (call_text, f)
    }
}

fn strip_wrappers(n: TsNode<'_>) -> TsNode<'_> {
    let mut n = n;
    loop {
        match n.kind() {
            "parenthesized_expression" if n.named_child_count() == 1 => n = n.named_child(0).expect("one child"),
            "cast_expression" => match n.child_by_field_name("value") {
                Some(v) => n = v,
                None => return n,
            },
            _ => return n,
        }
    }
}

/// Source text parsed for a record: function definitions as written, macros
/// wrapped into a function on the same lines.
fn lowering_source(record: &FunctionRecord) -> String {
    if record.kind == RecordKind::Function {
        return record.body.clone();
    }
    let params: Vec<String> = record
        .params
        .iter()
        .map(|p| if p.name == "__VA_ARGS__" { "...".to_string() } else { format!("void *{}", p.name) })
        .collect();
    let params = if params.is_empty() { "void".to_string() } else { params.join(", ") };
    let value = macro_value(&record.body).replace("\\\r\n", " \n").replace("\\\n", " \n");
    let trimmed = value.trim();
    let statement_like = trimmed.starts_with("do") && trimmed[2..].trim_start().starts_with('{')
        || trimmed.starts_with('{')
        || trimmed.ends_with(';');
    if statement_like {
        let sep = if trimmed.ends_with(';') || trimmed.ends_with('}') && !trimmed.starts_with("do") { "" } else { ";" };
        format!("void {}({params}) {{ {value}{sep} }}", record.name)
    } else if trimmed.is_empty() {
        format!("void {}({params}) {{ }}", record.name)
    } else {
        format!("void *{}({params}) {{ return ({value}); }}", record.name)
    }
}

/// Replacement text of a `#define NAME(params) value` record.
fn macro_value(body: &str) -> &str {
    let Some(open) = body.find('(') else { return "" };
    let mut depth = 0;
    for (i, c) in body[open..].char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return &body[open + i + 1..];
                }
            }
            _ => {}
        }
    }
    ""
}

pub fn build_cfg(record: &FunctionRecord, resolver: &dyn CallResolver, options: BuildOptions) -> Result<Cfg, CfgError> {
    let source = lowering_source(record);
    let unparseable = || CfgError::Unparseable { function: record.name.clone() };
    let tree = syntax::parse(&source, record.language).ok_or_else(unparseable)?;
    let def = find_definition(tree.root_node()).ok_or_else(unparseable)?;
    let body = def.child_by_field_name("body").ok_or_else(unparseable)?;

    let mut lw = Lowerer {
        src: &source,
        file: record.span.file.clone(),
        line_offset: record.span.start_line,
        resolver,
        nodes: Vec::new(),
        edges: Vec::new(),
        locals: HashSet::new(),
        pending_gotos: HashMap::new(),
        seen_labels: HashSet::new(),
        breaks: Vec::new(),
        continues: Vec::new(),
        next_label: None,
        temps: 0,
        deferred_sinks: None,
        diagnostics: Vec::new(),
    };
    if def.has_error() {
        lw.diagnostics.push("body contains syntax errors; affected regions lowered as plain effects".into());
    }
    for p in &record.params {
        lw.locals.insert(p.name.clone());
    }
    for l in crate::extraction::parse::local_names(body, &source) {
        lw.locals.insert(l);
    }
    let entry_span = SourceSpan::line(record.span.file.clone(), record.span.start_line);
    lw.push(NodeKind::Entry, entry_span, Vec::new());
    let mut f = lw.stmt(body, vec![(0, Polarity::Unconditional)]);
    let mut unresolved: Vec<(String, Frontier)> = lw.pending_gotos.drain().collect();
    unresolved.sort_by(|a, b| a.0.cmp(&b.0));
    for (label, exits) in unresolved {
        lw.diagnostics.push(format!("goto {label} has no label in this function; treated as exit"));
        f.extend(exits);
    }
    if !f.is_empty() || !lw.nodes.iter().any(|n| n.kind.is_return()) {
        let end = SourceSpan::line(record.span.file.clone(), record.span.end_line);
        lw.push(NodeKind::Return { value: None }, end, f);
    }

    let (nodes, edges) = prune_unreachable(lw.nodes, lw.edges);
    let mut cfg = Cfg::new(record.name.clone(), nodes, edges, options.share_conditions)?;
    cfg.diagnostics = lw.diagnostics;
    cfg.params = record.params.iter().map(|p| p.name.clone()).collect();
    Ok(cfg)
}

fn find_definition(root: TsNode<'_>) -> Option<TsNode<'_>> {
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        if n.kind() == "function_definition" {
            return Some(n);
        }
        queue.extend(named_children(n));
    }
    None
}

fn prune_unreachable(nodes: Vec<Node>, edges: Vec<Edge>) -> (Vec<Node>, Vec<Edge>) {
    let mut succ = vec![Vec::new(); nodes.len()];
    for e in &edges {
        succ[e.from].push(e.to);
    }
    let mut seen = vec![false; nodes.len()];
    let mut stack = vec![0usize];
    while let Some(n) = stack.pop() {
        if std::mem::replace(&mut seen[n], true) {
            continue;
        }
        stack.extend(succ[n].iter().copied());
    }
    let mut remap = vec![usize::MAX; nodes.len()];
    let mut kept = Vec::new();
    for (i, n) in nodes.into_iter().enumerate() {
        if seen[i] {
            remap[i] = kept.len();
            kept.push(n);
        }
    }
    let edges = edges
        .into_iter()
        .filter(|e| seen[e.from] && seen[e.to])
        .map(|e| Edge { from: remap[e.from], to: remap[e.to], polarity: e.polarity })
        .collect();
    (kept, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{parse_source, Language};

    fn cfg_of(src: &str) -> Cfg {
        let (rs, _, _) = parse_source("t.c", src, Language::C);
        build_cfg(&rs[0], &Primitives::default(), BuildOptions::default()).unwrap()
    }

    fn kinds(c: &Cfg) -> Vec<String> {
        c.nodes.iter().map(|n| n.kind.label()).collect()
    }

    #[test]
    fn empty_function() {
        let c = cfg_of("void f(void){}");
        assert_eq!(kinds(&c), vec!["Entry", "Return"]);
        assert_eq!(c.edges, vec![Edge { from: 0, to: 1, polarity: Polarity::Unconditional }]);
    }

    #[test]
    fn guarded_free() {
        let c = cfg_of("void f(char *p){ if (p) { free(p); } return; }");
        assert_eq!(kinds(&c), vec!["Entry", "Branch p", "Free free(p)", "Return"]);
        let mut es: Vec<(usize, usize, Polarity)> = c.edges.iter().map(|e| (e.from, e.to, e.polarity)).collect();
        es.sort_by_key(|e| (e.0, e.1));
        assert_eq!(es, vec![
            (0, 1, Polarity::Unconditional),
            (1, 2, Polarity::True),
            (1, 3, Polarity::False),
            (2, 3, Polarity::Unconditional),
        ]);
    }

    #[test]
    fn allocation_forms() {
        let c = cfg_of("char *f(int n){ char *p = malloc(n); q = p; g(strdup(\"x\")); return calloc(1, n); }");
        let k = kinds(&c);
        assert_eq!(k[1], "Alloc p = malloc()");
        assert_eq!(k[2], "Escape GlobalStore p");
        assert_eq!(k[3], "Alloc $t0 = strdup()");
        assert_eq!(k[4], "Call g");
        assert_eq!(k[5], "Escape SinkCall $t0");
        assert_eq!(k[6], "Alloc $t1 = calloc()");
        assert_eq!(k[7], "Escape ReturnedPointer $t1");
        assert_eq!(k[8], "Return $t1");
    }

    #[test]
    fn goto_forward_and_labels() {
        let c = cfg_of("int f(void){ char *a = malloc(1);\n if (!a) goto out;\n free(a);\n out:\n return 0; }");
        let ret = c.returns();
        assert_eq!(ret.len(), 1);
        assert_eq!(c.nodes[ret[0]].label.as_deref(), Some("out"));
        assert_eq!(c.in_edge_ids(ret[0]).len(), 2);
        assert_eq!(c.nodes[ret[0]].span.start_line, 5);
    }

    #[test]
    fn unreachable_code_is_pruned() {
        let c = cfg_of("int f(void){ return 1; free(0); }");
        assert_eq!(kinds(&c), vec!["Entry", "Return 1"]);
    }

    #[test]
    fn loops_are_linearized() {
        let c = cfg_of("void f(int n){ while (n) { char *p = malloc(1); if (n > 3) break; free(p); } for (;;) { g(); } do { h(); } while (n); }");
        assert!(c.enumerate_paths(100).is_ok());
        assert_eq!(c.nodes.iter().filter(|n| n.kind.is_branch()).count(), 2);
    }

    #[test]
    fn switch_chain_with_default_and_fallthrough() {
        let c = cfg_of("int f(int x){ switch (x) { case 1: a(); case 2: b(); break; default: d(); } return 0; }");
        let branches: Vec<&str> = c.nodes.iter().filter_map(|n| match &n.kind { NodeKind::Branch { cond } => Some(cond.as_str()), _ => None }).collect();
        assert_eq!(branches, vec!["x==1", "x==2"]);
        assert_eq!(c.count_paths(), 3);
    }

    #[test]
    fn macro_records_lower() {
        let (rs, _, _) = parse_source("m.h", "\n#define SAFE_FREE(p) do { free(p); (p) = NULL; } while (0)\n#define XMALLOC(n) malloc(n)\n", Language::C);
        let c = build_cfg(&rs[0], &Primitives::default(), BuildOptions::default()).unwrap();
        assert!(kinds(&c).contains(&"Free free(p)".to_string()));
        assert_eq!(c.nodes[1].span.start_line, 2);
        let c = build_cfg(&rs[1], &Primitives::default(), BuildOptions::default()).unwrap();
        assert_eq!(kinds(&c)[1], "Alloc $t0 = malloc()");
    }

    #[test]
    fn ifdef_in_body_becomes_branch() {
        let c = cfg_of("void f(void){\n#ifdef USE_X\n g();\n#else\n h();\n#endif\n}");
        assert!(kinds(&c).contains(&"Branch defined(USE_X)".to_string()));
        assert!(!c.diagnostics.is_empty());
    }

    #[test]
    fn sink_condition_escapes_on_success_arm() {
        let (rs, _, _) = parse_source("t.c", "int f(void){ char *c = malloc(1);\n if (!put(c)) goto fail;\n return 1;\n fail:\n return 0; }", Language::C);
        let hints = HintsFile::default();
        let sinks = vec!["put".to_string()];
        let r = SummaryResolver { primitives: &Primitives::default(), hints: &hints, sinks: &sinks };
        let c = build_cfg(&rs[0], &r, BuildOptions::default()).unwrap();
        let esc = c.nodes.iter().position(|n| matches!(n.kind, NodeKind::Escape { .. })).unwrap();
        let b = c.nodes.iter().position(|n| n.kind.is_branch()).unwrap();
        assert!(c.edges.iter().any(|e| e.from == b && e.to == esc && e.polarity == Polarity::False));
        assert_eq!(c.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Escape { .. })).count(), 1);
    }

    #[test]
    fn cpp_new_and_delete() {
        let (rs, _, _) = parse_source("t.cpp", "void f(){ int *p = new int(3); delete p; }", Language::Cpp);
        let c = build_cfg(&rs[0], &Primitives::default(), BuildOptions::default()).unwrap();
        assert_eq!(kinds(&c)[1..3], ["Alloc p = new()".to_string(), "Free delete(p)".to_string()]);
    }
}
