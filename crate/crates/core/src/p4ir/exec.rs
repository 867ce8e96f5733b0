// SPDX-License-Identifier: Apache-2.0

//! Reference interpreter. A validated [`Program`] plus its table entries is
//! lowered into an [`Executable`] where every name is resolved to an index;
//! packets are then parsed, matched and rewritten without string lookups.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::ir::*;
use super::validate::{has_errors, validate, Diagnostic};

/// Numeric view of an unset `egress_spec`.
pub const EGRESS_UNSET: u64 = 0xffff;
/// Numeric view of a dropped `egress_spec`.
pub const EGRESS_DROP: u64 = 0xfffe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EgressSpec {
    Unset,
    Drop,
    Port(u16),
}

impl EgressSpec {
    fn numeric(self) -> u64 {
        match self {
            EgressSpec::Unset => EGRESS_UNSET,
            EgressSpec::Drop => EGRESS_DROP,
            EgressSpec::Port(p) => u64::from(p),
        }
    }

    fn from_numeric(v: u64) -> Self {
        match v & 0xffff {
            EGRESS_UNSET => EgressSpec::Unset,
            EGRESS_DROP => EgressSpec::Drop,
            p => EgressSpec::Port(p as u16),
        }
    }
}

/// Standard metadata carried alongside a packet through the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metadata {
    pub ingress_port: u16,
    pub egress_spec: EgressSpec,
    pub pcp: u8,
    pub is_internal: bool,
    /// Meaningful only when `is_internal` is set.
    pub orig_ingress_port: u16,
}

impl Metadata {
    pub fn new(ingress_port: u16) -> Self {
        Metadata { ingress_port, egress_spec: EgressSpec::Unset, pcp: 0, is_internal: false, orig_ingress_port: 0 }
    }

    pub fn orig_ingress(&self) -> Option<u16> {
        self.is_internal.then_some(self.orig_ingress_port)
    }

    pub fn get(&self, key: MetaKey) -> u64 {
        match key {
            MetaKey::IngressPort => u64::from(self.ingress_port),
            MetaKey::EgressSpec => self.egress_spec.numeric(),
            MetaKey::Pcp => u64::from(self.pcp),
            MetaKey::IsInternal => u64::from(self.is_internal),
            MetaKey::OrigIngressPort => u64::from(self.orig_ingress_port),
        }
    }

    pub fn set(&mut self, key: MetaKey, v: u64) {
        let v = v & width_mask(key.width());
        match key {
            MetaKey::IngressPort => self.ingress_port = v as u16,
            MetaKey::EgressSpec => self.egress_spec = EgressSpec::from_numeric(v),
            MetaKey::Pcp => self.pcp = v as u8,
            MetaKey::IsInternal => self.is_internal = v != 0,
            MetaKey::OrigIngressPort => self.orig_ingress_port = v as u16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Disposition {
    Forward(u16),
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Rejected,
    Truncated {
        needed_bits: usize,
        available_bits: usize,
    },
    /// Only reachable with an unvalidated program.
    NoProgress,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("parse failed in state `{state}`: {kind:?}")]
pub struct ParseError {
    pub state: String,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("entry {index} for table `{table}`: {message}")]
pub struct InstallError {
    pub table: String,
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Error)]
pub enum BuildError {
    #[error("program has {} validation error(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Install(#[from] InstallError),
}

/// Values of all header instances of one packet, plus their validity bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderSet {
    valid: Vec<bool>,
    values: Vec<u64>,
}

impl HeaderSet {
    pub fn is_valid(&self, header: usize) -> bool {
        self.valid[header]
    }
}

/// The result of running the parser alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub headers: HeaderSet,
    pub meta: Metadata,
    /// Bytes consumed by extraction; the rest is opaque payload.
    pub consumed: usize,
}

/// The result of a full pipeline run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub disposition: Disposition,
    /// Rewritten packet; empty when dropped.
    pub bytes: Vec<u8>,
    pub meta: Metadata,
    pub parse_error: Option<ParseError>,
}

/// Action selected by a table lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionCall {
    action: usize,
    params: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selected<'a> {
    pub action: &'a str,
    pub params: &'a [u64],
    /// Install index of the matching entry; `None` for the default action.
    pub entry: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Field { header: usize, value: usize, width: u32 },
    Meta(MetaKey),
}

#[derive(Debug, Clone)]
enum CExpr {
    Lit(u64),
    Param(usize),
    Slot(Slot),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
}

#[derive(Debug, Clone, Copy)]
enum Next {
    State(usize),
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy)]
enum CSelect {
    Slot(Slot),
    Lookahead { offset_bits: u32, width: u32 },
}

#[derive(Debug, Clone)]
struct CState {
    name: String,
    extract: Option<usize>,
    assign: Vec<(MetaKey, CExpr)>,
    select: Option<CSelect>,
    cases: Vec<(u64, Next)>,
    default_next: Next,
}

#[derive(Debug, Clone)]
enum CPrim {
    SetField(Slot, CExpr),
    SetEgress(CExpr),
    SetMeta(MetaKey, CExpr),
    Push(usize),
    Pop(usize),
    Drop,
    NoOp,
}

#[derive(Debug, Clone)]
struct CAction {
    name: String,
    param_widths: Vec<u32>,
    prims: Vec<CPrim>,
}

#[derive(Debug, Clone)]
enum CPred {
    Meta(MetaKey, CmpOp, u64),
    Valid(usize),
    Not(Box<CPred>),
}

#[derive(Debug, Clone)]
enum CStmt {
    Apply(usize),
    If(CPred, Vec<CStmt>, Vec<CStmt>),
}

#[derive(Debug, Clone)]
struct FieldLayout {
    bit_offset: u32,
    width: u32,
}

#[derive(Debug, Clone)]
struct HeaderLayout {
    name: String,
    fields: Vec<(String, FieldLayout)>,
    bytes: usize,
    base: usize,
}

#[derive(Debug, Clone)]
struct InstalledEntry {
    values: Vec<u64>,
    masks: Vec<u64>,
    call: ActionCall,
}

#[derive(Debug, Clone)]
enum Matcher {
    /// Exact keys only: full key vector to first-installed entry.
    Exact(HashMap<Vec<u64>, usize>),
    /// One lpm key plus optional exact keys: one hash map per prefix
    /// length, probed longest first.
    Lpm { pos: usize, width: u32, levels: Vec<(u32, HashMap<Vec<u64>, usize>)> },
    /// Ternary tables: entries pre-sorted by priority (desc) then install order.
    Ordered(Vec<usize>),
}

#[derive(Debug, Clone)]
struct InstalledTable {
    keys: Vec<(Slot, MatchKind, u32)>,
    allowed: Vec<usize>,
    default: ActionCall,
    entries: Vec<InstalledEntry>,
    matcher: Matcher,
}

#[derive(Debug)]
struct Compiled {
    headers: Vec<HeaderLayout>,
    value_count: usize,
    states: Vec<CState>,
    start: usize,
    actions: Vec<CAction>,
    ingress: Vec<CStmt>,
    egress: Vec<CStmt>,
    header_index: HashMap<String, usize>,
    table_index: HashMap<String, usize>,
}

/// A validated program with its table entries installed.
#[derive(Debug, Clone)]
pub struct Executable {
    prog: Arc<Compiled>,
    tables: Arc<Vec<InstalledTable>>,
}

pub(crate) fn width_mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

fn prefix_mask(width: u32, prefix_len: u32) -> u64 {
    if prefix_len == 0 {
        0
    } else {
        width_mask(width) & !width_mask(width - prefix_len)
    }
}

/// Reads `width` bits starting `bit_off` bits into `buf`, MSB first.
pub(crate) fn read_bits(buf: &[u8], bit_off: usize, width: u32) -> u64 {
    let first = bit_off / 8;
    let last = (bit_off + width as usize - 1) / 8;
    let mut acc: u128 = 0;
    for b in &buf[first..=last] {
        acc = (acc << 8) | u128::from(*b);
    }
    let shift = (last - first + 1) * 8 - (bit_off % 8) - width as usize;
    ((acc >> shift) as u64) & width_mask(width)
}

pub(crate) fn write_bits(buf: &mut [u8], bit_off: usize, width: u32, value: u64) {
    let first = bit_off / 8;
    let last = (bit_off + width as usize - 1) / 8;
    let span = last - first + 1;
    let mut acc: u128 = 0;
    for b in &buf[first..=last] {
        acc = (acc << 8) | u128::from(*b);
    }
    let shift = span * 8 - (bit_off % 8) - width as usize;
    let mask = u128::from(width_mask(width)) << shift;
    acc = (acc & !mask) | ((u128::from(value & width_mask(width)) << shift) & mask);
    for i in (0..span).rev() {
        buf[first + i] = acc as u8;
        acc >>= 8;
    }
}

impl Executable {
    /// Validates `program`, lowers it, and installs `entries`.
    pub fn new(program: &Program, entries: &[TableEntry]) -> Result<Self, BuildError> {
        let diags = validate(program);
        if has_errors(&diags) {
            return Err(BuildError::Invalid(diags));
        }
        let prog = Compiled::lower(program);
        let tables = install(program, &prog, entries)?;
        Ok(Executable { prog: Arc::new(prog), tables: Arc::new(tables) })
    }

    pub fn header_index(&self, name: &str) -> Option<usize> {
        self.prog.header_index.get(name).copied()
    }

    /// Reads `header.field` from a header set; `None` if the header is
    /// invalid or the name does not resolve.
    pub fn field(&self, hs: &HeaderSet, reference: &str) -> Option<u64> {
        let (h, f) = reference.split_once('.')?;
        let hi = self.header_index(h)?;
        let layout = &self.prog.headers[hi];
        let fi = layout.fields.iter().position(|(n, _)| n == f)?;
        hs.valid[hi].then(|| hs.values[layout.base + fi])
    }

    pub fn is_valid(&self, hs: &HeaderSet, header: &str) -> bool {
        self.header_index(header).is_some_and(|h| hs.valid[h])
    }

    /// Runs the parser over `bytes` arriving on `ingress_port`.
    pub fn parse(&self, bytes: &[u8], ingress_port: u16) -> Result<Parsed, ParseError> {
        let prog = &*self.prog;
        let mut hs = HeaderSet { valid: vec![false; prog.headers.len()], values: vec![0; prog.value_count] };
        let mut meta = Metadata::new(ingress_port);
        let mut cursor = 0usize;
        let mut state = prog.start;
        let avail_bits = bytes.len() * 8;
        for _ in 0..=prog.states.len() {
            let st = &prog.states[state];
            if let Some(h) = st.extract {
                let layout = &prog.headers[h];
                if cursor + layout.bytes > bytes.len() {
                    return Err(ParseError {
                        state: st.name.clone(),
                        kind: ParseErrorKind::Truncated {
                            needed_bits: (cursor + layout.bytes) * 8,
                            available_bits: avail_bits,
                        },
                    });
                }
                let src = &bytes[cursor..cursor + layout.bytes];
                for (i, (_, f)) in layout.fields.iter().enumerate() {
                    hs.values[layout.base + i] = read_bits(src, f.bit_offset as usize, f.width);
                }
                hs.valid[h] = true;
                cursor += layout.bytes;
            }
            for (key, e) in &st.assign {
                let v = eval(e, &hs, &meta, &[]);
                meta.set(*key, v);
            }
            let next = match st.select {
                None => st.default_next,
                Some(sel) => {
                    let key = match sel {
                        CSelect::Slot(s) => read_slot(s, &hs, &meta),
                        CSelect::Lookahead { offset_bits, width } => {
                            let start = cursor * 8 + offset_bits as usize;
                            if start + width as usize > avail_bits {
                                return Err(ParseError {
                                    state: st.name.clone(),
                                    kind: ParseErrorKind::Truncated {
                                        needed_bits: start + width as usize,
                                        available_bits: avail_bits,
                                    },
                                });
                            }
                            read_bits(bytes, start, width)
                        }
                    };
                    st.cases.iter().find(|(v, _)| *v == key).map_or(st.default_next, |(_, n)| *n)
                }
            };
            match next {
                Next::Accept => return Ok(Parsed { headers: hs, meta, consumed: cursor }),
                Next::Reject => return Err(ParseError { state: st.name.clone(), kind: ParseErrorKind::Rejected }),
                Next::State(n) => state = n,
            }
        }
        Err(ParseError { state: prog.states[state].name.clone(), kind: ParseErrorKind::NoProgress })
    }

    /// Emits valid headers in declaration order followed by the payload.
    pub fn deparse(&self, hs: &HeaderSet, payload: &[u8]) -> Vec<u8> {
        let len: usize = self.prog.headers.iter().enumerate().filter(|(i, _)| hs.valid[*i]).map(|(_, h)| h.bytes).sum();
        let mut out = vec![0u8; len];
        let mut at = 0;
        for (i, layout) in self.prog.headers.iter().enumerate() {
            if !hs.valid[i] {
                continue;
            }
            let dst = &mut out[at..at + layout.bytes];
            for (fi, (_, f)) in layout.fields.iter().enumerate() {
                write_bits(dst, f.bit_offset as usize, f.width, hs.values[layout.base + fi]);
            }
            at += layout.bytes;
        }
        out.extend_from_slice(payload);
        out
    }

    /// Looks up one table without executing the selected action.
    pub fn apply_table(&self, table: &str, hs: &HeaderSet, meta: &Metadata) -> Option<Selected<'_>> {
        let t = &self.tables[*self.prog.table_index.get(table)?];
        let (entry, call) = t.lookup(hs, meta);
        Some(Selected { action: &self.prog.actions[call.action].name, params: &call.params, entry })
    }

    /// Parses, runs ingress then egress, and deparses. Parse failures drop
    /// the packet and are reported in [`Outcome::parse_error`].
    pub fn execute(&self, bytes: &[u8], ingress_port: u16) -> Outcome {
        let parsed = match self.parse(bytes, ingress_port) {
            Ok(p) => p,
            Err(e) => {
                return Outcome {
                    disposition: Disposition::Drop,
                    bytes: Vec::new(),
                    meta: Metadata::new(ingress_port),
                    parse_error: Some(e),
                }
            }
        };
        let Parsed { headers: mut hs, mut meta, consumed } = parsed;
        let live = self.run_block(&self.prog.ingress, &mut hs, &mut meta)
            && self.run_block(&self.prog.egress, &mut hs, &mut meta);
        let disposition = match (live, meta.egress_spec) {
            (true, EgressSpec::Port(p)) => Disposition::Forward(p),
            _ => Disposition::Drop,
        };
        if disposition == Disposition::Drop {
            meta.egress_spec = EgressSpec::Drop;
            return Outcome { disposition, bytes: Vec::new(), meta, parse_error: None };
        }
        let bytes = self.deparse(&hs, &bytes[consumed..]);
        Outcome { disposition, bytes, meta, parse_error: None }
    }

    /// Returns false once the packet has been dropped.
    fn run_block(&self, stmts: &[CStmt], hs: &mut HeaderSet, meta: &mut Metadata) -> bool {
        for s in stmts {
            match s {
                CStmt::Apply(t) => {
                    let (_, call) = self.tables[*t].lookup(hs, meta);
                    if !self.run_action(call, hs, meta) {
                        return false;
                    }
                }
                CStmt::If(pred, then, otherwise) => {
                    let branch = if eval_pred(pred, hs, meta) { then } else { otherwise };
                    if !self.run_block(branch, hs, meta) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn run_action(&self, call: &ActionCall, hs: &mut HeaderSet, meta: &mut Metadata) -> bool {
        for prim in &self.prog.actions[call.action].prims {
            match prim {
                CPrim::SetField(Slot::Field { header, value, width }, e) => {
                    let v = eval(e, hs, meta, &call.params);
                    if hs.valid[*header] {
                        hs.values[*value] = v & width_mask(*width);
                    }
                }
                CPrim::SetField(Slot::Meta(k), e) | CPrim::SetMeta(k, e) => {
                    let v = eval(e, hs, meta, &call.params);
                    meta.set(*k, v);
                }
                CPrim::SetEgress(e) => {
                    let v = eval(e, hs, meta, &call.params);
                    meta.set(MetaKey::EgressSpec, v);
                }
                CPrim::Push(h) => {
                    if !hs.valid[*h] {
                        let layout = &self.prog.headers[*h];
                        hs.values[layout.base..layout.base + layout.fields.len()].fill(0);
                        hs.valid[*h] = true;
                    }
                }
                CPrim::Pop(h) => hs.valid[*h] = false,
                CPrim::Drop => {
                    meta.egress_spec = EgressSpec::Drop;
                    return false;
                }
                CPrim::NoOp => {}
            }
        }
        true
    }
}

fn read_slot(s: Slot, hs: &HeaderSet, meta: &Metadata) -> u64 {
    match s {
        Slot::Field { header, value, .. } => {
            if hs.valid[header] {
                hs.values[value]
            } else {
                0
            }
        }
        Slot::Meta(k) => meta.get(k),
    }
}

fn eval(e: &CExpr, hs: &HeaderSet, meta: &Metadata, params: &[u64]) -> u64 {
    match e {
        CExpr::Lit(v) => *v,
        CExpr::Param(i) => params[*i],
        CExpr::Slot(s) => read_slot(*s, hs, meta),
        CExpr::Bin(op, l, r) => op.eval(eval(l, hs, meta, params), eval(r, hs, meta, params)),
    }
}

fn eval_pred(p: &CPred, hs: &HeaderSet, meta: &Metadata) -> bool {
    match p {
        CPred::Meta(k, op, v) => op.eval(meta.get(*k), *v),
        CPred::Valid(h) => hs.valid[*h],
        CPred::Not(inner) => !eval_pred(inner, hs, meta),
    }
}

impl InstalledTable {
    fn lookup(&self, hs: &HeaderSet, meta: &Metadata) -> (Option<usize>, &ActionCall) {
        let mut key = Vec::with_capacity(self.keys.len());
        for (slot, _, _) in &self.keys {
            if let Slot::Field { header, .. } = slot {
                // Keys over invalid headers never match.
                if !hs.valid[*header] {
                    return (None, &self.default);
                }
            }
            key.push(read_slot(*slot, hs, meta));
        }
        let hit = match &self.matcher {
            Matcher::Exact(map) => map.get(&key).copied(),
            Matcher::Lpm { pos, width, levels } => {
                let full = key[*pos];
                levels.iter().find_map(|(plen, map)| {
                    key[*pos] = full & prefix_mask(*width, *plen);
                    map.get(&key).copied()
                })
            }
            Matcher::Ordered(order) => order.iter().copied().find(|&i| {
                let e = &self.entries[i];
                key.iter().zip(&e.masks).zip(&e.values).all(|((k, m), v)| k & m == *v)
            }),
        };
        match hit {
            Some(i) => (Some(i), &self.entries[i].call),
            None => (None, &self.default),
        }
    }
}

impl Compiled {
    fn lower(p: &Program) -> Compiled {
        let mut headers = Vec::with_capacity(p.headers.len());
        let mut base = 0;
        for h in &p.headers {
            let mut off = 0;
            let fields = h
                .fields
                .iter()
                .map(|f| {
                    let l = FieldLayout { bit_offset: off, width: f.width };
                    off += f.width;
                    (f.name.clone(), l)
                })
                .collect::<Vec<_>>();
            headers.push(HeaderLayout { name: h.name.clone(), bytes: (off / 8) as usize, base, fields });
            base += h.fields.len();
        }
        let header_index: HashMap<String, usize> =
            headers.iter().enumerate().map(|(i, h)| (h.name.clone(), i)).collect();
        let state_index: HashMap<&str, usize> =
            p.parser.states.iter().enumerate().map(|(i, s)| (s.name.as_str(), i)).collect();
        let table_index: HashMap<String, usize> =
            p.tables.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect();

        let mut c = Compiled {
            headers,
            value_count: base,
            states: Vec::new(),
            start: state_index[p.parser.start.as_str()],
            actions: Vec::new(),
            ingress: Vec::new(),
            egress: Vec::new(),
            header_index,
            table_index,
        };

        let next = |n: &str| match n {
            ACCEPT => Next::Accept,
            REJECT => Next::Reject,
            s => Next::State(state_index[s]),
        };
        c.states = p
            .parser
            .states
            .iter()
            .map(|s| CState {
                name: s.name.clone(),
                extract: s.extract.as_ref().map(|h| c.header_index[h]),
                assign: s.assign.iter().map(|a| (MetaKey::parse(&a.meta).unwrap(), c.expr(&a.value, &[]))).collect(),
                select: s.select.as_ref().map(|k| match k {
                    SelectKey::Field(r) => CSelect::Slot(c.slot(r)),
                    SelectKey::Lookahead { offset_bits, width } => {
                        CSelect::Lookahead { offset_bits: *offset_bits, width: *width }
                    }
                }),
                cases: s.cases.iter().map(|cs| (cs.value.0, next(&cs.next))).collect(),
                default_next: next(&s.default_next),
            })
            .collect();
        c.actions = p
            .actions
            .iter()
            .map(|a| CAction {
                name: a.name.clone(),
                param_widths: a.params.iter().map(|p| p.width).collect(),
                prims: a.primitives.iter().map(|pr| c.prim(pr, &a.params)).collect(),
            })
            .collect();
        c.ingress = c.stmts(&p.ingress);
        c.egress = c.stmts(&p.egress);
        c
    }

    fn slot(&self, r: &FieldRef) -> Slot {
        if r.is_meta() {
            return Slot::Meta(MetaKey::parse(&r.field).unwrap());
        }
        let h = self.header_index[&r.header];
        let layout = &self.headers[h];
        let fi = layout.fields.iter().position(|(n, _)| *n == r.field).unwrap();
        Slot::Field { header: h, value: layout.base + fi, width: layout.fields[fi].1.width }
    }

    fn expr(&self, e: &Expr, params: &[ParamDecl]) -> CExpr {
        match e {
            Expr::Lit(v) => CExpr::Lit(*v),
            Expr::Param(n) => CExpr::Param(params.iter().position(|p| p.name == *n).unwrap()),
            Expr::Field(r) => CExpr::Slot(self.slot(r)),
            Expr::Bin(op, l, r) => CExpr::Bin(*op, Box::new(self.expr(l, params)), Box::new(self.expr(r, params))),
        }
    }

    fn prim(&self, p: &Primitive, params: &[ParamDecl]) -> CPrim {
        match p {
            Primitive::SetField { field, value } => CPrim::SetField(self.slot(field), self.expr(value, params)),
            Primitive::SetEgress { value } => CPrim::SetEgress(self.expr(value, params)),
            Primitive::SetMeta { meta, value } => {
                CPrim::SetMeta(MetaKey::parse(meta).unwrap(), self.expr(value, params))
            }
            Primitive::PushHeader { header } => CPrim::Push(self.header_index[header]),
            Primitive::PopHeader { header } => CPrim::Pop(self.header_index[header]),
            Primitive::Drop => CPrim::Drop,
            Primitive::NoOp => CPrim::NoOp,
        }
    }

    fn pred(&self, p: &Predicate) -> CPred {
        match p {
            Predicate::Meta(c) => CPred::Meta(MetaKey::parse(&c.key).unwrap(), c.op, c.value.0),
            Predicate::Valid(h) => CPred::Valid(self.header_index[h]),
            Predicate::Not(inner) => CPred::Not(Box::new(self.pred(inner))),
        }
    }

    fn stmts(&self, s: &[Statement]) -> Vec<CStmt> {
        s.iter()
            .map(|st| match st {
                Statement::Apply(t) => CStmt::Apply(self.table_index[t]),
                Statement::If(b) => CStmt::If(self.pred(&b.cond), self.stmts(&b.then), self.stmts(&b.otherwise)),
            })
            .collect()
    }

    fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.name == name)
    }

    fn bind(&self, action: usize, params: &[super::Value]) -> Result<ActionCall, String> {
        let a = &self.actions[action];
        if params.len() != a.param_widths.len() {
            return Err(format!(
                "action `{}` takes {} parameter(s), {} given",
                a.name,
                a.param_widths.len(),
                params.len()
            ));
        }
        for (i, (v, w)) in params.iter().zip(&a.param_widths).enumerate() {
            if v.0 & !width_mask(*w) != 0 {
                return Err(format!("parameter {i} of `{}` ({:#x}) exceeds {w} bits", a.name, v.0));
            }
        }
        Ok(ActionCall { action, params: params.iter().map(|v| v.0).collect() })
    }
}

fn install(p: &Program, c: &Compiled, entries: &[TableEntry]) -> Result<Vec<InstalledTable>, InstallError> {
    let mut tables: Vec<InstalledTable> = p
        .tables
        .iter()
        .map(|t| {
            let keys = t
                .keys
                .iter()
                .map(|k| {
                    let s = c.slot(&k.field);
                    let w = match s {
                        Slot::Field { width, .. } => width,
                        Slot::Meta(m) => m.width(),
                    };
                    (s, k.kind, w)
                })
                .collect();
            let da = c.action_index(&t.default_action.name).unwrap();
            let default = c.bind(da, &t.default_action.params).map_err(|message| InstallError {
                table: t.name.clone(),
                index: usize::MAX,
                message: format!("default action: {message}"),
            })?;
            Ok(InstalledTable {
                keys,
                allowed: t.actions.iter().map(|a| c.action_index(a).unwrap()).collect(),
                default,
                entries: Vec::new(),
                matcher: Matcher::Ordered(Vec::new()),
            })
        })
        .collect::<Result<_, InstallError>>()?;

    let mut priorities: Vec<Vec<u32>> = vec![Vec::new(); tables.len()];
    let mut prefix_lens: Vec<Vec<u32>> = vec![Vec::new(); tables.len()];
    for (index, e) in entries.iter().enumerate() {
        let err = |message: String| InstallError { table: e.table.clone(), index, message };
        let ti = *c.table_index.get(&e.table).ok_or_else(|| err("no such table".into()))?;
        let t = &mut tables[ti];
        let ternary = t.keys.iter().any(|k| k.1 == MatchKind::Ternary);
        let action = c
            .action_index(&e.action)
            .filter(|a| t.allowed.contains(a))
            .ok_or_else(|| err(format!("action `{}` is not allowed", e.action)))?;
        let call = c.bind(action, &e.params).map_err(err)?;
        if e.matches.len() != t.keys.len() {
            return Err(err(format!("{} match value(s) for {} key(s)", e.matches.len(), t.keys.len())));
        }
        if ternary != e.priority.is_some() {
            return Err(err(if ternary {
                "ternary table entries need a priority".into()
            } else {
                "priority given for a table without ternary keys".into()
            }));
        }
        let mut values = Vec::with_capacity(t.keys.len());
        let mut masks = Vec::with_capacity(t.keys.len());
        let mut plen = 0;
        for (i, ((_, kind, width), m)) in t.keys.iter().zip(&e.matches).enumerate() {
            let full = width_mask(*width);
            if m.value.0 & !full != 0 {
                return Err(err(format!("key {i}: value {:#x} exceeds {width} bits", m.value.0)));
            }
            let mask = match (kind, m.prefix_len, &m.mask) {
                (MatchKind::Exact, None, None) => full,
                (MatchKind::Lpm, Some(l), None) if l <= *width => {
                    plen = l;
                    prefix_mask(*width, l)
                }
                (MatchKind::Lpm, Some(l), None) => {
                    return Err(err(format!("key {i}: prefix length {l} exceeds {width} bits")))
                }
                (MatchKind::Ternary, None, Some(mask)) => mask.0 & full,
                _ => return Err(err(format!("key {i}: match value does not fit a {kind} key"))),
            };
            values.push(m.value.0 & mask);
            masks.push(mask);
        }
        t.entries.push(InstalledEntry { values, masks, call });
        priorities[ti].push(e.priority.unwrap_or(0));
        prefix_lens[ti].push(plen);
    }

    for (ti, t) in tables.iter_mut().enumerate() {
        let lpm = t.keys.iter().position(|k| k.1 == MatchKind::Lpm);
        let ternary = t.keys.iter().any(|k| k.1 == MatchKind::Ternary);
        t.matcher = if ternary {
            let mut order: Vec<usize> = (0..t.entries.len()).collect();
            // Stable sort keeps install order among equal priorities.
            order.sort_by_key(|&i| std::cmp::Reverse(priorities[ti][i]));
            Matcher::Ordered(order)
        } else if let Some(pos) = lpm {
            let mut levels: Vec<(u32, HashMap<Vec<u64>, usize>)> = Vec::new();
            for (i, e) in t.entries.iter().enumerate() {
                let l = prefix_lens[ti][i];
                let slot = match levels.iter().position(|(pl, _)| *pl == l) {
                    Some(s) => s,
                    None => {
                        levels.push((l, HashMap::new()));
                        levels.len() - 1
                    }
                };
                levels[slot].1.entry(e.values.clone()).or_insert(i);
            }
            levels.sort_by_key(|(l, _)| std::cmp::Reverse(*l));
            Matcher::Lpm { pos, width: t.keys[pos].2, levels }
        } else {
            let mut map = HashMap::new();
            for (i, e) in t.entries.iter().enumerate() {
                map.entry(e.values.clone()).or_insert(i);
            }
            Matcher::Exact(map)
        };
    }
    Ok(tables)
}

impl fmt::Display for Disposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Disposition::Forward(p) => write!(f, "forward({p})"),
            Disposition::Drop => f.write_str("drop"),
        }
    }
}

/// One-shot convenience: builds an executable and runs a single packet.
pub fn execute_pipeline(
    program: &Program,
    entries: &[TableEntry],
    bytes: &[u8],
    ingress_port: u16,
) -> Result<Outcome, BuildError> {
    Ok(Executable::new(program, entries)?.execute(bytes, ingress_port))
}

/// One-shot convenience: builds an entry-less executable and parses.
pub fn parse_packet(
    program: &Program,
    bytes: &[u8],
    ingress_port: u16,
) -> Result<Result<Parsed, ParseError>, BuildError> {
    Ok(Executable::new(program, &[])?.parse(bytes, ingress_port))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::frame::{ipv4_addr, Frame, Ipv4};
    use crate::p4ir::load_program;

    fn router() -> Executable {
        Executable::new(&bundled::l3_router(), &bundled::l3_router_entries()).unwrap()
    }

    fn ip_frame(dst: u32) -> Frame {
        Frame::ipv4(0x0200_0000_00ee, 0x0200_0000_00ff, Ipv4::new(ipv4_addr(192, 168, 0, 1), dst))
    }

    #[test]
    fn bit_helpers() {
        let mut buf = [0u8; 4];
        write_bits(&mut buf, 3, 13, 0x1abc);
        assert_eq!(read_bits(&buf, 3, 13), 0x1abc);
        assert_eq!(buf, [0x1a, 0xbc, 0, 0]);
        write_bits(&mut buf, 0, 3, 0b101);
        assert_eq!(buf[0], 0xba);
        assert_eq!(read_bits(&buf, 3, 13), 0x1abc);
        let wide = [0xffu8; 9];
        assert_eq!(read_bits(&wide, 4, 64), u64::MAX);
    }

    #[test]
    fn untagged_frame_defaults_to_pcp_zero() {
        let r = router();
        let p = r.parse(&ip_frame(ipv4_addr(10, 0, 1, 1)).to_bytes(), 4).unwrap();
        assert!(r.is_valid(&p.headers, "ethernet"));
        assert!(r.is_valid(&p.headers, "ipv4"));
        assert!(!r.is_valid(&p.headers, "vlan"));
        assert_eq!(p.meta.pcp, 0);
        assert_eq!(p.meta.ingress_port, 4);
        assert_eq!(p.consumed, 34);
    }

    #[test]
    fn vlan_pcp_is_extracted() {
        let r = router();
        let p = r.parse(&ip_frame(ipv4_addr(10, 0, 1, 1)).with_vlan(5, 7).to_bytes(), 0).unwrap();
        assert_eq!(p.meta.pcp, 5);
        assert_eq!(r.field(&p.headers, "vlan.vid"), Some(7));
        assert_eq!(r.field(&p.headers, "ipv4.dst_addr"), Some(u64::from(ipv4_addr(10, 0, 1, 1))));
    }

    #[test]
    fn truncated_extract_names_state() {
        let r = router();
        let bytes = ip_frame(ipv4_addr(10, 0, 1, 1)).to_bytes();
        let e = r.parse(&bytes[..30], 0).unwrap_err();
        assert_eq!(e.state, "parse_ipv4");
        assert!(matches!(e.kind, ParseErrorKind::Truncated { .. }));
        let out = r.execute(&bytes[..30], 0);
        assert_eq!(out.disposition, Disposition::Drop);
        assert_eq!(out.parse_error.unwrap().state, "parse_ipv4");
    }

    #[test]
    fn reject_state() {
        let mut p = bundled::l3_router();
        p.parser.states[0].default_next = REJECT.into();
        let x = Executable::new(&p, &[]).unwrap();
        let mut f = ip_frame(0);
        f.ipv4 = None;
        f.ether_type = 0x86dd;
        let e = x.parse(&f.to_bytes(), 0).unwrap_err();
        assert_eq!(e, ParseError { state: "start".into(), kind: ParseErrorKind::Rejected });
    }

    #[test]
    fn golden_route_to_port_9() {
        let bytes = ip_frame(ipv4_addr(10, 0, 9, 5)).to_bytes();
        let out = router().execute(&bytes, 2);
        assert_eq!(out.disposition, Disposition::Forward(9));
        #[rustfmt::skip]
        let expected: Vec<u8> = vec![
            0x02, 0xaa, 0, 0, 0, 0x09,      // dst: next hop of 10.0.9.0/24
            0x02, 0xbb, 0, 0, 0, 0x09,      // src: port 9 MAC from eth_fib
            0x08, 0x00,
            0x45, 0, 0, 20, 0, 0, 0, 0,
            63, 17, 0, 0,                   // ttl 64 -> 63
            192, 168, 0, 1,
            10, 0, 9, 5,
        ];
        assert_eq!(out.bytes, expected);
        assert_eq!(out.meta.egress_spec, EgressSpec::Port(9));
    }

    #[test]
    fn egress_tagging_pushes_vlan() {
        let mut payload = ip_frame(ipv4_addr(10, 0, 11, 1)).to_bytes();
        payload.extend_from_slice(b"tail");
        let out = router().execute(&payload, 0);
        assert_eq!(out.disposition, Disposition::Forward(11));
        assert_eq!(out.bytes.len(), payload.len() + 4);
        // TPID, then pcp 0 / vid 111, then the original type.
        assert_eq!(&out.bytes[12..18], &[0x81, 0x00, 0x00, 111, 0x08, 0x00]);
        assert!(out.bytes.ends_with(b"tail"));
    }

    #[test]
    fn tagged_frames_keep_their_tag() {
        let bytes = ip_frame(ipv4_addr(10, 0, 11, 1)).with_vlan(6, 42).to_bytes();
        let out = router().execute(&bytes, 0);
        assert_eq!(out.disposition, Disposition::Forward(11));
        assert_eq!(out.bytes.len(), bytes.len());
        assert_eq!(&out.bytes[14..16], &[0xc0, 42]);
    }

    #[test]
    fn unrouted_destination_drops() {
        let out = router().execute(&ip_frame(ipv4_addr(172, 16, 0, 1)).to_bytes(), 0);
        assert_eq!(out.disposition, Disposition::Drop);
        assert!(out.bytes.is_empty());
        assert!(out.parse_error.is_none());
    }

    #[test]
    fn explicit_drop_entry_wins_over_shorter_prefixes() {
        let r = router();
        assert_eq!(r.execute(&ip_frame(ipv4_addr(10, 1, 2, 3)).to_bytes(), 0).disposition, Disposition::Drop);
        assert_eq!(r.execute(&ip_frame(ipv4_addr(10, 1, 2, 4)).to_bytes(), 0).disposition, Disposition::Forward(9));
        assert_eq!(r.execute(&ip_frame(ipv4_addr(10, 1, 7, 4)).to_bytes(), 0).disposition, Disposition::Forward(5));
        assert_eq!(r.execute(&ip_frame(ipv4_addr(10, 9, 0, 0)).to_bytes(), 0).disposition, Disposition::Forward(0));
    }

    #[test]
    fn non_ip_frames_miss_lpm() {
        let mut f = ip_frame(0);
        f.ipv4 = None;
        f.ether_type = 0x0806;
        let r = router();
        let p = r.parse(&f.to_bytes(), 0).unwrap();
        let sel = r.apply_table("ipv4_lpm", &p.headers, &p.meta).unwrap();
        assert_eq!(sel, Selected { action: "drop", params: &[], entry: None });
    }

    const MATCH_PROGRAM: &str = r#"{
        "headers": [{"name": "h", "fields": [{"name": "a", "width": 32}, {"name": "b", "width": 16}]}],
        "parser": {"start": "s", "states": [{"name": "s", "extract": "h"}]},
        "actions": [
            {"name": "a1", "primitives": [{"op": "set_egress", "value": 1}]},
            {"name": "a2", "primitives": [{"op": "set_egress", "value": 2}]},
            {"name": "out", "params": [{"name": "p", "width": 16}], "primitives": [{"op": "set_egress", "value": "$p"}]},
            {"name": "miss", "primitives": [{"op": "no_op"}]}
        ],
        "tables": [
            {"name": "lpm", "keys": [{"field": "h.a", "match": "lpm"}], "actions": ["a1", "a2", "out"],
             "default_action": {"name": "out", "params": [7]}},
            {"name": "tern", "keys": [{"field": "h.b", "match": "ternary"}], "actions": ["a1", "a2", "miss"],
             "default_action": {"name": "miss"}}
        ],
        "ingress": [{"apply": "lpm"}]
    }"#;

    fn match_exec(entries: &[TableEntry]) -> Result<Executable, BuildError> {
        Executable::new(&load_program(MATCH_PROGRAM).unwrap(), entries)
    }

    fn entry(table: &str, m: MatchValue, action: &str, priority: Option<u32>) -> TableEntry {
        TableEntry { table: table.into(), matches: vec![m], action: action.into(), params: vec![], priority }
    }

    fn headers(x: &Executable, a: u32, b: u16) -> Parsed {
        let mut bytes = a.to_be_bytes().to_vec();
        bytes.extend_from_slice(&b.to_be_bytes());
        x.parse(&bytes, 0).unwrap()
    }

    #[test]
    fn lpm_prefers_longest_prefix() {
        let x = match_exec(&[
            entry("lpm", MatchValue::lpm(0x0a00_0000, 8), "a1", None),
            entry("lpm", MatchValue::lpm(0x0a01_0000, 16), "a2", None),
        ])
        .unwrap();
        let p = headers(&x, 0x0a01_0203, 0);
        assert_eq!(x.apply_table("lpm", &p.headers, &p.meta).unwrap().action, "a2");
        let p = headers(&x, 0x0a02_0203, 0);
        assert_eq!(x.apply_table("lpm", &p.headers, &p.meta).unwrap().action, "a1");
    }

    #[test]
    fn empty_table_uses_default() {
        let x = match_exec(&[]).unwrap();
        let p = headers(&x, 1, 2);
        let sel = x.apply_table("lpm", &p.headers, &p.meta).unwrap();
        assert_eq!(sel, Selected { action: "out", params: &[7], entry: None });
        assert_eq!(x.execute(&[0, 0, 0, 1, 0, 2], 0).disposition, Disposition::Forward(7));
    }

    #[test]
    fn ternary_highest_priority_wins() {
        let x = match_exec(&[
            entry("tern", MatchValue::ternary(0x0000, 0x0000), "a2", Some(1)),
            entry("tern", MatchValue::ternary(0x1200, 0xff00), "a1", Some(10)),
        ])
        .unwrap();
        let p = headers(&x, 0, 0x1234);
        let sel = x.apply_table("tern", &p.headers, &p.meta).unwrap();
        assert_eq!((sel.action, sel.entry), ("a1", Some(1)));
        let p = headers(&x, 0, 0x9934);
        assert_eq!(x.apply_table("tern", &p.headers, &p.meta).unwrap().action, "a2");
    }

    #[test]
    fn ternary_ties_go_to_first_installed() {
        let x = match_exec(&[
            entry("tern", MatchValue::ternary(0x0034, 0x00ff), "a2", Some(5)),
            entry("tern", MatchValue::ternary(0x1200, 0xff00), "a1", Some(5)),
        ])
        .unwrap();
        let p = headers(&x, 0, 0x1234);
        assert_eq!(x.apply_table("tern", &p.headers, &p.meta).unwrap().action, "a2");
    }

    #[test]
    fn install_time_errors() {
        let mut bad_arity = entry("lpm", MatchValue::lpm(0, 0), "out", None);
        let e = match_exec(std::slice::from_ref(&bad_arity)).unwrap_err();
        assert!(e.to_string().contains("takes 1 parameter"), "{e}");
        bad_arity.params = vec![super::super::Value(3)];
        assert!(match_exec(&[bad_arity]).is_ok());

        let cases = [
            entry("tern", MatchValue::ternary(0, 0), "a1", None),
            entry("lpm", MatchValue::lpm(0, 0), "a1", Some(3)),
            entry("lpm", MatchValue::exact(0), "a1", None),
            entry("lpm", MatchValue::lpm(0, 33), "a1", None),
            entry("lpm", MatchValue::lpm(0, 8), "miss", None),
            entry("tern", MatchValue::ternary(0x1_0000, 0xffff), "a1", Some(1)),
            entry("nope", MatchValue::exact(0), "a1", None),
        ];
        for c in cases {
            assert!(matches!(match_exec(std::slice::from_ref(&c)), Err(BuildError::Install(_))), "{c:?}");
        }
    }

    #[test]
    fn invalid_program_is_refused() {
        let mut p = bundled::l3_router();
        p.ingress.push(Statement::Apply("ghost".into()));
        assert!(matches!(Executable::new(&p, &[]), Err(BuildError::Invalid(_))));
    }

    #[test]
    fn lookahead_select() {
        let text = MATCH_PROGRAM.replace(
            r#"{"name": "s", "extract": "h"}"#,
            r#"{"name": "s", "select": {"lookahead": {"offset_bits": 32, "width": 16}},
                "cases": [{"value": 7, "next": "reject"}], "default_next": "t"},
               {"name": "t", "extract": "h"}"#,
        );
        let x = Executable::new(&load_program(&text).unwrap(), &[]).unwrap();
        assert!(x.parse(&[0, 0, 0, 0, 0, 8], 0).is_ok());
        assert_eq!(x.parse(&[0, 0, 0, 0, 0, 7], 0).unwrap_err().kind, ParseErrorKind::Rejected);
        assert!(matches!(x.parse(&[0, 0, 0, 0, 0], 0).unwrap_err().kind, ParseErrorKind::Truncated { .. }));
    }

    #[test]
    fn header_writes_and_pops() {
        let text = MATCH_PROGRAM
            .replace(
                r#"{"name": "miss", "primitives": [{"op": "no_op"}]}"#,
                r#"{"name": "miss", "primitives": [{"op": "no_op"}]},
               {"name": "strip", "primitives": [
                  {"op": "set_egress", "value": 3},
                  {"op": "pop_header", "header": "h"},
                  {"op": "set_field", "field": "h.b", "value": 9},
                  {"op": "set_meta", "meta": "pcp", "value": "h.b"}]}"#,
            )
            .replace(r#""actions": ["a1", "a2", "out"]"#, r#""actions": ["a1", "a2", "out", "strip"]"#)
            .replace(r#""default_action": {"name": "out", "params": [7]}"#, r#""default_action": {"name": "strip"}"#);
        let x = Executable::new(&load_program(&text).unwrap(), &[]).unwrap();
        let out = x.execute(&[1, 2, 3, 4, 5, 6, 0xaa], 0);
        assert_eq!(out.disposition, Disposition::Forward(3));
        assert_eq!(out.bytes, vec![0xaa]);
        assert_eq!(out.meta.pcp, 0);
    }

    #[test]
    fn drop_is_terminal() {
        let mut p = bundled::l3_router();
        p.ingress.insert(0, Statement::Apply("vlan_tag".into()));
        let t = p.tables.iter_mut().find(|t| t.name == "vlan_tag").unwrap();
        t.actions.push("drop".into());
        t.default_action = ActionRef { name: "drop".into(), params: vec![] };
        let x = Executable::new(&p, &bundled::l3_router_entries()).unwrap();
        let out = x.execute(&ip_frame(ipv4_addr(10, 0, 4, 1)).to_bytes(), 0);
        assert_eq!(out.disposition, Disposition::Drop);
        assert_eq!(out.meta.egress_spec, EgressSpec::Drop);
    }

    #[test]
    fn metadata_numeric_view() {
        let mut m = Metadata::new(3);
        assert_eq!(m.get(MetaKey::EgressSpec), EGRESS_UNSET);
        m.set(MetaKey::EgressSpec, 12);
        assert_eq!(m.egress_spec, EgressSpec::Port(12));
        m.set(MetaKey::EgressSpec, EGRESS_DROP);
        assert_eq!(m.egress_spec, EgressSpec::Drop);
        m.set(MetaKey::Pcp, 13);
        assert_eq!(m.pcp, 5);
        assert_eq!(m.orig_ingress(), None);
        m.set(MetaKey::IsInternal, 1);
        assert_eq!(m.orig_ingress(), Some(0));
    }
}
