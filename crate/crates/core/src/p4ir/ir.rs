// SPDX-License-Identifier: Apache-2.0

//! Program representation for the P4 subset, exactly as it appears in the
//! JSON documents. Names are plain strings here; resolution to indices
//! happens when an [`Executable`](super::Executable) is built.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::value::{parse_literal, Value};

/// Terminal parser transition: stop parsing, keep what was extracted.
pub const ACCEPT: &str = "accept";
/// Terminal parser transition: the packet is malformed.
pub const REJECT: &str = "reject";
/// Namespace used by field references that name standard metadata.
pub const META_NAMESPACE: &str = "meta";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Program {
    pub headers: Vec<HeaderType>,
    pub parser: Parser,
    #[serde(default)]
    pub actions: Vec<Action>,
    #[serde(default)]
    pub tables: Vec<Table>,
    #[serde(default)]
    pub ingress: Vec<Statement>,
    #[serde(default)]
    pub egress: Vec<Statement>,
}

impl Program {
    pub fn header(&self, name: &str) -> Option<&HeaderType> {
        self.headers.iter().find(|h| h.name == name)
    }

    pub fn action(&self, name: &str) -> Option<&Action> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn state(&self, name: &str) -> Option<&ParserState> {
        self.parser.states.iter().find(|s| s.name == name)
    }

    /// Serializes the program back to its canonical JSON form.
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serialization is infallible")
    }
}

/// A header instance declaration. Fields are laid out MSB-first in
/// declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeaderType {
    pub name: String,
    pub fields: Vec<FieldDecl>,
}

impl HeaderType {
    pub fn width_bits(&self) -> u32 {
        self.fields.iter().map(|f| f.width).sum()
    }

    pub fn field_offset(&self, field: &str) -> Option<(u32, u32)> {
        let mut offset = 0;
        for f in &self.fields {
            if f.name == field {
                return Some((offset, f.width));
            }
            offset += f.width;
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDecl {
    pub name: String,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parser {
    pub start: String,
    pub states: Vec<ParserState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParserState {
    pub name: String,
    /// Header extracted on entry. States without an extraction only branch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extract: Option<String>,
    /// Metadata writes performed after the extraction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assign: Vec<MetaAssign>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<SelectKey>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cases: Vec<SelectCase>,
    #[serde(default = "default_accept")]
    pub default_next: String,
}

fn default_accept() -> String {
    ACCEPT.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectKey {
    Field(FieldRef),
    /// Peeks at bits ahead of the cursor without consuming them.
    Lookahead {
        offset_bits: u32,
        width: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectCase {
    pub value: Value,
    pub next: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaAssign {
    pub meta: String,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub name: String,
    #[serde(default)]
    pub params: Vec<ParamDecl>,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDecl {
    pub name: String,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    SetField {
        field: FieldRef,
        value: Expr,
    },
    SetEgress {
        value: Expr,
    },
    PushHeader {
        header: String,
    },
    PopHeader {
        header: String,
    },
    SetMeta {
        meta: String,
        value: Expr,
    },
    /// Marks the packet for drop and ends pipeline processing.
    Drop,
    NoOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Lpm,
    Ternary,
}

impl fmt::Display for MatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchKind::Exact => "exact",
            MatchKind::Lpm => "lpm",
            MatchKind::Ternary => "ternary",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableKey {
    pub field: FieldRef,
    #[serde(rename = "match")]
    pub kind: MatchKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table {
    pub name: String,
    #[serde(default)]
    pub keys: Vec<TableKey>,
    pub actions: Vec<String>,
    pub default_action: ActionRef,
}

impl Table {
    pub fn has_ternary(&self) -> bool {
        self.keys.iter().any(|k| k.kind == MatchKind::Ternary)
    }
}

/// An action name with bound parameter values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRef {
    pub name: String,
    #[serde(default)]
    pub params: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Statement {
    Apply(String),
    If(IfBlock),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfBlock {
    pub cond: Predicate,
    #[serde(default)]
    pub then: Vec<Statement>,
    #[serde(default, rename = "else", skip_serializing_if = "Vec::is_empty")]
    pub otherwise: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Predicate {
    Meta(MetaCompare),
    /// True when the named header is valid.
    Valid(String),
    Not(Box<Predicate>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaCompare {
    pub key: String,
    pub op: CmpOp,
    pub value: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn eval(self, lhs: u64, rhs: u64) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }
}

/// `header.field`, or `meta.<key>` for standard metadata.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FieldRef {
    pub header: String,
    pub field: String,
}

impl FieldRef {
    pub fn new(header: impl Into<String>, field: impl Into<String>) -> Self {
        FieldRef { header: header.into(), field: field.into() }
    }

    pub fn meta(key: impl Into<String>) -> Self {
        FieldRef::new(META_NAMESPACE, key)
    }

    pub fn is_meta(&self) -> bool {
        self.header == META_NAMESPACE
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.header, self.field)
    }
}

impl TryFrom<String> for FieldRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        match s.split_once('.') {
            Some((h, f)) if is_ident(h) && is_ident(f) => Ok(FieldRef::new(h, f)),
            _ => Err(format!("field reference `{s}` is not of the form `header.field`")),
        }
    }
}

impl From<FieldRef> for String {
    fn from(r: FieldRef) -> String {
        r.to_string()
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOp {
    Add,
    Sub,
    And,
    Or,
}

impl BinOp {
    pub fn eval(self, lhs: u64, rhs: u64) -> u64 {
        match self {
            BinOp::Add => lhs.wrapping_add(rhs),
            BinOp::Sub => lhs.wrapping_sub(rhs),
            BinOp::And => lhs & rhs,
            BinOp::Or => lhs | rhs,
        }
    }
}

/// Right-hand side of assignments.
///
/// JSON forms: a number or literal string (`"0x0800"`, `"10.0.0.1"`,
/// `"02:00:00:00:00:01"`), `"$param"`, `"header.field"`, `"meta.key"`, or
/// `{"sub": [lhs, rhs]}` (likewise `add`, `and`, `or`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ExprRepr", into = "ExprRepr")]
pub enum Expr {
    Lit(u64),
    Param(String),
    Field(FieldRef),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn field(header: &str, field: &str) -> Expr {
        Expr::Field(FieldRef::new(header, field))
    }

    pub fn meta(key: &str) -> Expr {
        Expr::Field(FieldRef::meta(key))
    }

    pub fn param(name: &str) -> Expr {
        Expr::Param(name.to_string())
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    /// Visits every field reference in the expression.
    pub fn for_each_field<'a>(&'a self, f: &mut impl FnMut(&'a FieldRef)) {
        match self {
            Expr::Field(r) => f(r),
            Expr::Bin(_, l, r) => {
                l.for_each_field(f);
                r.for_each_field(f);
            }
            Expr::Lit(_) | Expr::Param(_) => {}
        }
    }

    pub fn for_each_param<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            Expr::Param(p) => f(p),
            Expr::Bin(_, l, r) => {
                l.for_each_param(f);
                r.for_each_param(f);
            }
            Expr::Lit(_) | Expr::Field(_) => {}
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ExprRepr {
    Num(u64),
    Text(String),
    Bin(BinRepr),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum BinRepr {
    Add(Box<ExprRepr>, Box<ExprRepr>),
    Sub(Box<ExprRepr>, Box<ExprRepr>),
    And(Box<ExprRepr>, Box<ExprRepr>),
    Or(Box<ExprRepr>, Box<ExprRepr>),
}

impl TryFrom<ExprRepr> for Expr {
    type Error = String;

    fn try_from(repr: ExprRepr) -> Result<Self, Self::Error> {
        match repr {
            ExprRepr::Num(n) => Ok(Expr::Lit(n)),
            ExprRepr::Text(s) => {
                if let Some(p) = s.strip_prefix('$') {
                    if is_ident(p) {
                        return Ok(Expr::Param(p.to_string()));
                    }
                    return Err(format!("bad parameter reference `{s}`"));
                }
                if let Ok(v) = parse_literal(&s) {
                    return Ok(Expr::Lit(v));
                }
                FieldRef::try_from(s).map(Expr::Field)
            }
            ExprRepr::Bin(b) => {
                let (op, l, r) = match b {
                    BinRepr::Add(l, r) => (BinOp::Add, l, r),
                    BinRepr::Sub(l, r) => (BinOp::Sub, l, r),
                    BinRepr::And(l, r) => (BinOp::And, l, r),
                    BinRepr::Or(l, r) => (BinOp::Or, l, r),
                };
                Ok(Expr::bin(op, Expr::try_from(*l)?, Expr::try_from(*r)?))
            }
        }
    }
}

impl From<Expr> for ExprRepr {
    fn from(e: Expr) -> Self {
        match e {
            Expr::Lit(n) => ExprRepr::Num(n),
            Expr::Param(p) => ExprRepr::Text(format!("${p}")),
            Expr::Field(r) => ExprRepr::Text(r.to_string()),
            Expr::Bin(op, l, r) => {
                let l = Box::new(ExprRepr::from(*l));
                let r = Box::new(ExprRepr::from(*r));
                ExprRepr::Bin(match op {
                    BinOp::Add => BinRepr::Add(l, r),
                    BinOp::Sub => BinRepr::Sub(l, r),
                    BinOp::And => BinRepr::And(l, r),
                    BinOp::Or => BinRepr::Or(l, r),
                })
            }
        }
    }
}

/// The closed set of standard metadata keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetaKey {
    IngressPort,
    EgressSpec,
    Pcp,
    IsInternal,
    OrigIngressPort,
}

impl MetaKey {
    pub const ALL: [MetaKey; 5] =
        [MetaKey::IngressPort, MetaKey::EgressSpec, MetaKey::Pcp, MetaKey::IsInternal, MetaKey::OrigIngressPort];

    pub fn parse(name: &str) -> Option<MetaKey> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            MetaKey::IngressPort => "ingress_port",
            MetaKey::EgressSpec => "egress_spec",
            MetaKey::Pcp => "pcp",
            MetaKey::IsInternal => "is_internal",
            MetaKey::OrigIngressPort => "orig_ingress_port",
        }
    }

    pub fn width(self) -> u32 {
        match self {
            MetaKey::IngressPort | MetaKey::EgressSpec | MetaKey::OrigIngressPort => 16,
            MetaKey::Pcp => 3,
            MetaKey::IsInternal => 1,
        }
    }
}

/// One row of a table-entry file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub table: String,
    #[serde(rename = "match")]
    pub matches: Vec<MatchValue>,
    pub action: String,
    #[serde(default)]
    pub params: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u32>,
}

/// Match value for one key: bare `value` for exact, `value` + `prefix_len`
/// for lpm, `value` + `mask` for ternary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchValue {
    pub value: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix_len: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Value>,
}

impl MatchValue {
    pub fn exact(v: u64) -> Self {
        MatchValue { value: Value(v), prefix_len: None, mask: None }
    }

    pub fn lpm(v: u64, prefix_len: u32) -> Self {
        MatchValue { value: Value(v), prefix_len: Some(prefix_len), mask: None }
    }

    pub fn ternary(v: u64, mask: u64) -> Self {
        MatchValue { value: Value(v), prefix_len: None, mask: Some(Value(mask)) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySet {
    pub entries: Vec<TableEntry>,
}

impl EntrySet {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("entry serialization is infallible")
    }
}
