// SPDX-License-Identifier: Apache-2.0

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::ir::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {}: {}", self.location, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Checks every structural invariant of a loaded program. An empty result
/// means the program can be executed.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut v = Validator { p, diags: Vec::new() };
    v.headers();
    v.parser();
    v.actions();
    v.tables();
    v.pipeline("ingress", &p.ingress);
    v.pipeline("egress", &p.egress);
    v.diags
}

struct Validator<'a> {
    p: &'a Program,
    diags: Vec<Diagnostic>,
}

impl<'a> Validator<'a> {
    fn error(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.diags.push(Diagnostic { severity: Severity::Error, location: location.into(), message: message.into() });
    }

    fn warning(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.diags.push(Diagnostic { severity: Severity::Warning, location: location.into(), message: message.into() });
    }

    /// Width of the referenced header field or metadata key.
    fn field_width(&self, r: &FieldRef) -> Result<u32, String> {
        if r.is_meta() {
            return MetaKey::parse(&r.field)
                .map(MetaKey::width)
                .ok_or_else(|| format!("unknown metadata key `{}`", r.field));
        }
        let h = self.p.header(&r.header).ok_or_else(|| format!("`{r}` refers to undeclared header `{}`", r.header))?;
        h.field_offset(&r.field)
            .map(|(_, w)| w)
            .ok_or_else(|| format!("`{r}` refers to undeclared field `{}` of `{}`", r.field, r.header))
    }

    fn check_expr(&mut self, loc: &str, e: &Expr, params: Option<&[ParamDecl]>) {
        let mut errors = Vec::new();
        e.for_each_field(&mut |r| {
            if let Err(m) = self.field_width(r) {
                errors.push(m);
            }
        });
        e.for_each_param(&mut |name| match params {
            None => errors.push(format!("parameter `${name}` used outside an action")),
            Some(ps) if !ps.iter().any(|p| p.name == name) => {
                errors.push(format!("undeclared action parameter `${name}`"))
            }
            Some(_) => {}
        });
        for m in errors {
            self.error(loc, m);
        }
    }

    fn headers(&mut self) {
        let p = self.p;
        let mut seen = HashSet::new();
        for h in &p.headers {
            let loc = format!("headers[{}]", h.name);
            if !seen.insert(h.name.as_str()) {
                self.error(&loc, format!("duplicate header `{}`", h.name));
            }
            if h.name == META_NAMESPACE {
                self.error(&loc, "`meta` is reserved for standard metadata");
            }
            if h.fields.is_empty() {
                self.error(&loc, "header has no fields");
            }
            let mut names = HashSet::new();
            for f in &h.fields {
                if !names.insert(f.name.as_str()) {
                    self.error(&loc, format!("duplicate field `{}`", f.name));
                }
                if !(1..=64).contains(&f.width) {
                    self.error(&loc, format!("field `{}` width {} outside 1..=64", f.name, f.width));
                }
            }
            if h.width_bits() % 8 != 0 {
                self.error(&loc, format!("total width {} bits is not a multiple of 8", h.width_bits()));
            }
        }
    }

    fn parser(&mut self) {
        let p = self.p;
        let states = &p.parser.states;
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, s) in states.iter().enumerate() {
            let loc = format!("parser.states[{}]", s.name);
            if s.name == ACCEPT || s.name == REJECT {
                self.error(&loc, format!("`{}` is a reserved transition name", s.name));
            }
            if index.insert(s.name.as_str(), i).is_some() {
                self.error(&loc, format!("duplicate parser state `{}`", s.name));
            }
        }
        if !index.contains_key(p.parser.start.as_str()) {
            self.error("parser.start", format!("start state `{}` is not declared", p.parser.start));
        }

        let resolves = |n: &str| n == ACCEPT || n == REJECT || index.contains_key(n);
        for s in states {
            let loc = format!("parser.states[{}]", s.name);
            if let Some(h) = &s.extract {
                if p.header(h).is_none() {
                    self.error(&loc, format!("extracts undeclared header `{h}`"));
                }
            }
            for a in &s.assign {
                if MetaKey::parse(&a.meta).is_none() {
                    self.error(&loc, format!("assigns unknown metadata key `{}`", a.meta));
                }
                self.check_expr(&loc, &a.value, None);
            }
            match &s.select {
                Some(SelectKey::Field(r)) => {
                    if let Err(m) = self.field_width(r) {
                        self.error(&loc, m);
                    }
                }
                Some(SelectKey::Lookahead { width, .. }) => {
                    if !(1..=64).contains(width) {
                        self.error(&loc, format!("lookahead width {width} outside 1..=64"));
                    }
                }
                None if !s.cases.is_empty() => {
                    self.error(&loc, "select cases without a select key");
                }
                None => {}
            }
            for next in s.cases.iter().map(|c| c.next.as_str()).chain([s.default_next.as_str()]) {
                if !resolves(next) {
                    self.error(&loc, format!("transition to undeclared state `{next}`"));
                }
            }
        }

        let succ: Vec<Vec<usize>> = states
            .iter()
            .map(|s| {
                s.cases
                    .iter()
                    .map(|c| c.next.as_str())
                    .chain([s.default_next.as_str()])
                    .filter_map(|n| index.get(n).copied())
                    .collect()
            })
            .collect();

        if let Some(at) = find_cycle(&succ) {
            self.error(format!("parser.states[{}]", states[at].name), "invariant violated: parser graph is acyclic");
            return;
        }

        // Headers extractable strictly after each state, in topological order.
        let decl: HashMap<&str, usize> = p.headers.iter().enumerate().map(|(i, h)| (h.name.as_str(), i)).collect();
        let mut after: Vec<Option<HashSet<usize>>> = vec![None; states.len()];
        fn fill(
            i: usize,
            succ: &[Vec<usize>],
            states: &[ParserState],
            decl: &HashMap<&str, usize>,
            after: &mut Vec<Option<HashSet<usize>>>,
        ) {
            if after[i].is_some() {
                return;
            }
            let mut set = HashSet::new();
            for &n in &succ[i] {
                fill(n, succ, states, decl, after);
                set.extend(after[n].as_ref().unwrap().iter().copied());
                if let Some(h) = states[n].extract.as_deref().and_then(|h| decl.get(h)) {
                    set.insert(*h);
                }
            }
            after[i] = Some(set);
        }
        for i in 0..states.len() {
            fill(i, &succ, states, &decl, &mut after);
        }
        for (i, s) in states.iter().enumerate() {
            let Some(&h) = s.extract.as_deref().and_then(|h| decl.get(h)) else { continue };
            let later = after[i].as_ref().unwrap();
            let loc = format!("parser.states[{}]", s.name);
            if later.contains(&h) {
                self.error(&loc, format!("header `{}` may be extracted twice on one parser path", p.headers[h].name));
            }
            if let Some(&earlier) = later.iter().filter(|&&o| o < h).min() {
                self.error(
                    &loc,
                    format!(
                        "header `{}` can be extracted after `{}` but is declared before it (deparse follows declaration order)",
                        p.headers[earlier].name, p.headers[h].name
                    ),
                );
            }
        }

        // Reachability is advisory only.
        let mut reach = vec![false; states.len()];
        if let Some(&start) = index.get(p.parser.start.as_str()) {
            let mut stack = vec![start];
            while let Some(i) = stack.pop() {
                if !std::mem::replace(&mut reach[i], true) {
                    stack.extend(succ[i].iter().copied());
                }
            }
            for (i, s) in states.iter().enumerate() {
                if !reach[i] {
                    self.warning(format!("parser.states[{}]", s.name), "state is unreachable from start");
                }
            }
        }
    }

    fn actions(&mut self) {
        let p = self.p;
        let mut seen = HashSet::new();
        for a in &p.actions {
            let loc = format!("actions[{}]", a.name);
            if !seen.insert(a.name.as_str()) {
                self.error(&loc, format!("duplicate action `{}`", a.name));
            }
            let mut names = HashSet::new();
            for prm in &a.params {
                if !names.insert(prm.name.as_str()) {
                    self.error(&loc, format!("duplicate parameter `{}`", prm.name));
                }
                if !(1..=64).contains(&prm.width) {
                    self.error(&loc, format!("parameter `{}` width {} outside 1..=64", prm.name, prm.width));
                }
            }
            for (i, prim) in a.primitives.iter().enumerate() {
                let ploc = format!("{loc}.primitives[{i}]");
                match prim {
                    Primitive::SetField { field, value } => {
                        if field.is_meta() {
                            self.error(&ploc, "set_field targets metadata; use set_meta");
                        } else if let Err(m) = self.field_width(field) {
                            self.error(&ploc, m);
                        }
                        self.check_expr(&ploc, value, Some(&a.params));
                    }
                    Primitive::SetEgress { value } => self.check_expr(&ploc, value, Some(&a.params)),
                    Primitive::SetMeta { meta, value } => {
                        if MetaKey::parse(meta).is_none() {
                            self.error(&ploc, format!("unknown metadata key `{meta}`"));
                        }
                        self.check_expr(&ploc, value, Some(&a.params));
                    }
                    Primitive::PushHeader { header } | Primitive::PopHeader { header } => {
                        if p.header(header).is_none() {
                            self.error(&ploc, format!("undeclared header `{header}`"));
                        }
                    }
                    Primitive::Drop | Primitive::NoOp => {}
                }
            }
        }
    }

    fn tables(&mut self) {
        let p = self.p;
        let mut seen = HashSet::new();
        for t in &p.tables {
            let loc = format!("tables[{}]", t.name);
            if !seen.insert(t.name.as_str()) {
                self.error(&loc, format!("duplicate table `{}`", t.name));
            }
            for (i, k) in t.keys.iter().enumerate() {
                if let Err(m) = self.field_width(&k.field) {
                    self.error(format!("{loc}.keys[{i}]"), m);
                }
            }
            if t.keys.iter().filter(|k| k.kind == MatchKind::Lpm).count() > 1 {
                self.error(&loc, "invariant violated: at most one lpm key per table");
            }
            for a in &t.actions {
                if p.action(a).is_none() {
                    self.error(&loc, format!("allowed action `{a}` is not declared"));
                }
            }
            let d = &t.default_action;
            match p.action(&d.name) {
                None => self.error(&loc, format!("default action `{}` is not declared", d.name)),
                Some(a) => {
                    if !t.actions.contains(&d.name) {
                        self.error(&loc, format!("default action `{}` is not in the allowed list", d.name));
                    }
                    if a.params.len() != d.params.len() {
                        self.error(
                            &loc,
                            format!(
                                "default action `{}` takes {} parameters, {} bound",
                                d.name,
                                a.params.len(),
                                d.params.len()
                            ),
                        );
                    }
                }
            }
        }
    }

    fn pipeline(&mut self, name: &str, stmts: &[Statement]) {
        for (i, s) in stmts.iter().enumerate() {
            let loc = format!("{name}[{i}]");
            match s {
                Statement::Apply(t) => {
                    if self.p.table(t).is_none() {
                        self.error(&loc, format!("applies undeclared table `{t}`"));
                    }
                }
                Statement::If(b) => {
                    self.predicate(&loc, &b.cond);
                    self.pipeline(&format!("{loc}.then"), &b.then);
                    self.pipeline(&format!("{loc}.else"), &b.otherwise);
                }
            }
        }
    }

    fn predicate(&mut self, loc: &str, pred: &Predicate) {
        match pred {
            Predicate::Meta(c) => {
                if MetaKey::parse(&c.key).is_none() {
                    self.error(loc, format!("unknown metadata key `{}`", c.key));
                }
            }
            Predicate::Valid(h) => {
                if self.p.header(h).is_none() {
                    self.error(loc, format!("validity test on undeclared header `{h}`"));
                }
            }
            Predicate::Not(inner) => self.predicate(loc, inner),
        }
    }
}

/// Returns a state on some cycle, if the graph has one.
fn find_cycle(succ: &[Vec<usize>]) -> Option<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut mark = vec![Mark::New; succ.len()];
    for root in 0..succ.len() {
        if mark[root] != Mark::New {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Active;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&child) = succ[node].get(*next) {
                *next += 1;
                match mark[child] {
                    Mark::Active => return Some(child),
                    Mark::New => {
                        mark[child] = Mark::Active;
                        stack.push((child, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}
