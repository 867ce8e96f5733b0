// SPDX-License-Identifier: Apache-2.0

//! Derives per-card programs from a switch-level program.
//!
//! Each card program keeps every original table and adds three:
//!
//! - `hymos_ingress_map` (ingress prologue) rewrites the card-local arrival
//!   port into its global id.
//! - `hymos_fabric_lookup` (ingress epilogue) leaves locally bound packets
//!   alone and wraps remote-bound ones in an outer Ethernet header, sending
//!   them to the virtual port of the destination card.
//! - `hymos_egress_port_map` (egress prologue) matches fabric arrivals,
//!   strips the outer header and forwards to the port it names.
//!
//! The original ingress and egress pipelines both run at the ingress card,
//! guarded by `is_internal == 0`. The parser gains a dispatch state that
//! peeks at the first EtherType and an outer-header state that marks the
//! packet internal; the inner frame of an internal packet is not parsed.

use std::collections::BTreeSet;

use thiserror::Error;

use super::encap::{DEFAULT_INTERNAL_ETHERTYPE, PORT_MAC_PREFIX};
use super::topology::{PortMap, Topology, TopologyError};
use crate::p4ir::*;

pub const RESERVED_PREFIX: &str = "hymos_";
/// Egress ports at or above this value name a destination card's fabric
/// interface rather than a physical port.
pub const VIRTUAL_PORT_BASE: u16 = 0x100;

pub const OUTER_HEADER: &str = "hymos_outer_eth";
pub const DISPATCH_STATE: &str = "hymos_start";
pub const OUTER_STATE: &str = "hymos_parse_outer";
pub const INGRESS_MAP: &str = "hymos_ingress_map";
pub const FABRIC_LOOKUP: &str = "hymos_fabric_lookup";
pub const EGRESS_PORT_MAP: &str = "hymos_egress_port_map";
pub const SYNTHESIZED_TABLES: [&str; 3] = [INGRESS_MAP, FABRIC_LOOKUP, EGRESS_PORT_MAP];

const SET_INGRESS: &str = "hymos_set_ingress";
const LOCAL_FORWARD: &str = "hymos_local_forward";
const ENCAP: &str = "hymos_encap";
const DECAP: &str = "hymos_decap";
const DROP: &str = "hymos_drop";
const NO_OP: &str = "hymos_no_op";

pub fn virtual_port(card: usize) -> u16 {
    VIRTUAL_PORT_BASE + card as u16
}

pub fn card_of_virtual(port: u16) -> Option<usize> {
    port.checked_sub(VIRTUAL_PORT_BASE).map(usize::from)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TranslateOptions {
    pub internal_ethertype: u16,
}

impl Default for TranslateOptions {
    fn default() -> Self {
        TranslateOptions { internal_ethertype: DEFAULT_INTERNAL_ETHERTYPE }
    }
}

#[derive(Debug, Clone, Error)]
pub enum TranslateError {
    #[error("switch program is invalid: {}", .0[0])]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("{kind} `{name}` uses the reserved prefix `{RESERVED_PREFIX}`")]
    ReservedName { kind: &'static str, name: String },
    #[error("global port {port} referenced by {context} is not in the topology")]
    UnknownPort { port: u64, context: String },
    #[error("start state must extract an Ethernet-shaped header (16-bit type at bit 96): {0}")]
    NotEthernet(String),
    #[error("parser state `{0}` reads meta.ingress_port, which is card-local until {INGRESS_MAP} runs")]
    ParserReadsIngressPort(String),
    #[error("parser state `{state}` already selects on the internal EtherType {ethertype:#06x}")]
    EthertypeCollision { state: String, ethertype: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CardProgram {
    pub card: usize,
    pub program: Program,
    /// Entries for the synthesized tables only.
    pub entries: Vec<TableEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationResult {
    pub cards: Vec<CardProgram>,
    pub port_map: PortMap,
    pub internal_ethertype: u16,
}

impl TranslationResult {
    /// The full entry set for `card`: the switch entries, which every card
    /// carries, followed by the card's synthesized entries.
    pub fn card_entries(&self, card: usize, switch_entries: &[TableEntry]) -> Vec<TableEntry> {
        let mut all = switch_entries.to_vec();
        all.extend(self.cards[card].entries.iter().cloned());
        all
    }
}

/// Builds the per-card programs for `topo`. `entries` are the switch-level
/// table entries; they are checked for port references but not copied.
pub fn translate(
    p: &Program,
    topo: &Topology,
    entries: &[TableEntry],
    opts: TranslateOptions,
) -> Result<TranslationResult, TranslateError> {
    topo.validate()?;
    check_reserved(p)?;
    let diags = validate(p);
    if has_errors(&diags) {
        return Err(TranslateError::Invalid(diags));
    }
    check_parser(p, opts.internal_ethertype)?;
    let port_map = topo.port_map();
    check_ports(p, entries, &port_map)?;

    let cards = (0..topo.num_cards())
        .map(|card| CardProgram { card, program: card_program(p, opts), entries: card_entries(card, &port_map) })
        .collect();
    Ok(TranslationResult { cards, port_map, internal_ethertype: opts.internal_ethertype })
}

fn check_reserved(p: &Program) -> Result<(), TranslateError> {
    let reserved = |kind, name: &String| {
        if name.starts_with(RESERVED_PREFIX) {
            Err(TranslateError::ReservedName { kind, name: name.clone() })
        } else {
            Ok(())
        }
    };
    p.headers.iter().try_for_each(|h| reserved("header", &h.name))?;
    p.parser.states.iter().try_for_each(|s| reserved("parser state", &s.name))?;
    p.actions.iter().try_for_each(|a| reserved("action", &a.name))?;
    p.tables.iter().try_for_each(|t| reserved("table", &t.name))
}

fn check_parser(p: &Program, ethertype: u16) -> Result<(), TranslateError> {
    let start = p.state(&p.parser.start).expect("validated");
    let shaped = start.extract.as_deref().and_then(|h| p.header(h)).is_some_and(|h| {
        h.width_bits() >= 112
            && h.fields
                .iter()
                .scan(0, |off, f| {
                    let here = *off;
                    *off += f.width;
                    Some((here, f.width))
                })
                .any(|(off, w)| off == 96 && w == 16)
    });
    if !shaped {
        return Err(TranslateError::NotEthernet(start.name.clone()));
    }
    for s in &p.parser.states {
        let mut reads_port = false;
        for a in &s.assign {
            a.value.for_each_field(&mut |r| reads_port |= r.is_meta() && r.field == MetaKey::IngressPort.name());
        }
        if let Some(SelectKey::Field(r)) = &s.select {
            reads_port |= r.is_meta() && r.field == MetaKey::IngressPort.name();
        }
        if reads_port {
            return Err(TranslateError::ParserReadsIngressPort(s.name.clone()));
        }
        if s.name == start.name && s.cases.iter().any(|c| c.value.0 == u64::from(ethertype)) {
            return Err(TranslateError::EthertypeCollision { state: s.name.clone(), ethertype });
        }
    }
    Ok(())
}

const PORT_META: [MetaKey; 3] = [MetaKey::IngressPort, MetaKey::EgressSpec, MetaKey::OrigIngressPort];

fn is_port_meta(name: &str) -> bool {
    PORT_META.iter().any(|k| k.name() == name)
}

/// Indices of parameters that an action writes into port metadata.
fn port_params(a: &Action) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut note = |e: &Expr| {
        if let Expr::Param(name) = e {
            if let Some(i) = a.params.iter().position(|p| p.name == *name) {
                out.insert(i);
            }
        }
    };
    for prim in &a.primitives {
        match prim {
            Primitive::SetEgress { value } => note(value),
            Primitive::SetMeta { meta, value } if is_port_meta(meta) => note(value),
            Primitive::SetField { field, value } if field.is_meta() && is_port_meta(&field.field) => note(value),
            _ => {}
        }
    }
    out
}

fn check_ports(p: &Program, entries: &[TableEntry], map: &PortMap) -> Result<(), TranslateError> {
    let check = |port: u64, context: &dyn Fn() -> String| {
        let sentinel = port == crate::p4ir::EGRESS_DROP || port == crate::p4ir::EGRESS_UNSET;
        if sentinel || u16::try_from(port).is_ok_and(|g| map.contains(g)) {
            Ok(())
        } else {
            Err(TranslateError::UnknownPort { port, context: context() })
        }
    };
    for a in &p.actions {
        for prim in &a.primitives {
            let literal = match prim {
                Primitive::SetEgress { value: Expr::Lit(v) } => Some(*v),
                Primitive::SetMeta { meta, value: Expr::Lit(v) } if is_port_meta(meta) => Some(*v),
                _ => None,
            };
            if let Some(v) = literal {
                check(v, &|| format!("action `{}`", a.name))?;
            }
        }
    }
    let bound = |action: &str, params: &[Value], context: &dyn Fn() -> String| -> Result<(), TranslateError> {
        let Some(a) = p.action(action) else { return Ok(()) };
        for i in port_params(a) {
            if let Some(v) = params.get(i) {
                check(v.0, context)?;
            }
        }
        Ok(())
    };
    for t in &p.tables {
        bound(&t.default_action.name, &t.default_action.params, &|| format!("default action of `{}`", t.name))?;
    }
    for (i, e) in entries.iter().enumerate() {
        let ctx = || format!("entry {i} of table `{}`", e.table);
        bound(&e.action, &e.params, &ctx)?;
        let Some(t) = p.table(&e.table) else { continue };
        for (k, m) in t.keys.iter().zip(&e.matches) {
            let full = m.prefix_len.is_none() && m.mask.is_none_or(|mask| mask.0 & 0xffff == 0xffff);
            if k.field.is_meta() && is_port_meta(&k.field.field) && full {
                check(m.value.0, &ctx)?;
            }
        }
    }
    Ok(())
}

fn prim_set(field: FieldRef, value: Expr) -> Primitive {
    Primitive::SetField { field, value }
}

fn outer(field: &str) -> FieldRef {
    FieldRef::new(OUTER_HEADER, field)
}

fn action(name: &str, params: &[(&str, u32)], primitives: Vec<Primitive>) -> Action {
    Action {
        name: name.into(),
        params: params.iter().map(|(n, w)| ParamDecl { name: (*n).into(), width: *w }).collect(),
        primitives,
    }
}

fn table(name: &str, key: MetaKey, actions: &[&str], default: &str) -> Table {
    Table {
        name: name.into(),
        keys: vec![TableKey { field: FieldRef::meta(key.name()), kind: MatchKind::Exact }],
        actions: actions.iter().map(|a| (*a).into()).collect(),
        default_action: ActionRef { name: default.into(), params: vec![] },
    }
}

fn card_program(p: &Program, opts: TranslateOptions) -> Program {
    let mut out = p.clone();
    out.headers.insert(
        0,
        HeaderType {
            name: OUTER_HEADER.into(),
            fields: [("dst_addr", 48), ("src_addr", 48), ("ether_type", 16)]
                .into_iter()
                .map(|(name, width)| FieldDecl { name: name.into(), width })
                .collect(),
        },
    );

    let dispatch = ParserState {
        name: DISPATCH_STATE.into(),
        extract: None,
        assign: vec![],
        select: Some(SelectKey::Lookahead { offset_bits: 96, width: 16 }),
        cases: vec![SelectCase { value: Value(u64::from(opts.internal_ethertype)), next: OUTER_STATE.into() }],
        default_next: p.parser.start.clone(),
    };
    let outer_state = ParserState {
        name: OUTER_STATE.into(),
        extract: Some(OUTER_HEADER.into()),
        assign: vec![
            MetaAssign { meta: MetaKey::IsInternal.name().into(), value: Expr::Lit(1) },
            MetaAssign {
                meta: MetaKey::OrigIngressPort.name().into(),
                value: Expr::bin(BinOp::And, Expr::Field(outer("src_addr")), Expr::Lit(0xff)),
            },
        ],
        select: None,
        cases: vec![],
        default_next: ACCEPT.into(),
    };
    out.parser.start = DISPATCH_STATE.into();
    out.parser.states.splice(0..0, [dispatch, outer_state]);

    let prefix = || Expr::Lit(PORT_MAC_PREFIX);
    out.actions.extend([
        action(
            SET_INGRESS,
            &[("port", 16)],
            vec![Primitive::SetMeta { meta: MetaKey::IngressPort.name().into(), value: Expr::param("port") }],
        ),
        action(LOCAL_FORWARD, &[], vec![Primitive::NoOp]),
        action(
            ENCAP,
            &[("vport", 16)],
            vec![
                Primitive::PushHeader { header: OUTER_HEADER.into() },
                prim_set(outer("dst_addr"), Expr::bin(BinOp::Or, Expr::meta(MetaKey::EgressSpec.name()), prefix())),
                prim_set(outer("src_addr"), Expr::bin(BinOp::Or, Expr::meta(MetaKey::IngressPort.name()), prefix())),
                prim_set(outer("ether_type"), Expr::Lit(u64::from(opts.internal_ethertype))),
                Primitive::SetEgress { value: Expr::param("vport") },
            ],
        ),
        action(
            DECAP,
            &[],
            vec![
                Primitive::SetEgress { value: Expr::bin(BinOp::And, Expr::Field(outer("dst_addr")), Expr::Lit(0xff)) },
                Primitive::PopHeader { header: OUTER_HEADER.into() },
            ],
        ),
        action(DROP, &[], vec![Primitive::Drop]),
        action(NO_OP, &[], vec![Primitive::NoOp]),
    ]);
    out.tables.extend([
        table(INGRESS_MAP, MetaKey::IngressPort, &[SET_INGRESS, NO_OP], NO_OP),
        table(FABRIC_LOOKUP, MetaKey::EgressSpec, &[LOCAL_FORWARD, ENCAP, DROP], DROP),
        table(EGRESS_PORT_MAP, MetaKey::IngressPort, &[DECAP, NO_OP], NO_OP),
    ]);

    let mut external = p.ingress.clone();
    external.extend(p.egress.iter().cloned());
    external.push(Statement::Apply(FABRIC_LOOKUP.into()));
    out.ingress = vec![
        Statement::Apply(INGRESS_MAP.into()),
        Statement::If(IfBlock {
            cond: Predicate::Meta(MetaCompare {
                key: MetaKey::IsInternal.name().into(),
                op: CmpOp::Eq,
                value: Value(0),
            }),
            then: external,
            otherwise: vec![],
        }),
    ];
    out.egress = vec![Statement::Apply(EGRESS_PORT_MAP.into())];
    out
}

fn card_entries(card: usize, map: &PortMap) -> Vec<TableEntry> {
    let entry = |table: &str, key: u64, action: &str, params: Vec<Value>| TableEntry {
        table: table.into(),
        matches: vec![MatchValue::exact(key)],
        action: action.into(),
        params,
        priority: None,
    };
    let mut out = Vec::new();
    for (local, &global) in map.card_ports(card).iter().enumerate() {
        out.push(entry(INGRESS_MAP, local as u64, SET_INGRESS, vec![Value(u64::from(global))]));
    }
    for global in map.all_ports() {
        let dest = map.card_of(global).expect("port from map");
        out.push(if dest == card {
            entry(FABRIC_LOOKUP, u64::from(global), LOCAL_FORWARD, vec![])
        } else {
            entry(FABRIC_LOOKUP, u64::from(global), ENCAP, vec![Value(u64::from(virtual_port(dest)))])
        });
    }
    for src in (0..map.num_cards()).filter(|&c| c != card) {
        out.push(entry(EGRESS_PORT_MAP, u64::from(virtual_port(src)), DECAP, vec![]));
    }
    out
}
