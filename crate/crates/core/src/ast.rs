//! Unified query expression tree shared by both query syntaxes.
//!
//! Both the traditional `$`-option parser and the simplified parser produce a
//! [`Query`]. Everything downstream (costing, cache keys, evaluation,
//! forwarding) works on this one representation.

use std::cmp::Ordering;
use std::fmt::{self, Write as _};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Property path in metadata casing, e.g. `Price` or `Supplier/Country`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldRef(Vec<String>);

impl FieldRef {
    pub fn new(segments: Vec<String>) -> Self {
        assert!(!segments.is_empty(), "field path must not be empty");
        Self(segments)
    }

    pub fn simple(name: impl Into<String>) -> Self {
        Self(vec![name.into()])
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    /// Last path segment, the property name.
    pub fn property(&self) -> &str {
        self.0.last().expect("non-empty path")
    }

    pub fn is_simple(&self) -> bool {
        self.0.len() == 1
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

/// Finite decimal number with a canonical rendering: no exponent, no
/// trailing zeros, no leading `+`, and `-0` folded into `0`.
#[derive(Debug, Clone, Copy)]
pub struct Number(f64);

impl Number {
    pub fn new(v: f64) -> Option<Self> {
        if v.is_finite() {
            Some(Self(if v == 0.0 { 0.0 } else { v }))
        } else {
            None
        }
    }

    /// Parses `-?digits(.digits)?`. Exponents and signs other than a leading
    /// minus are not decimals here.
    pub fn parse_decimal(s: &str) -> Option<Self> {
        let body = s.strip_prefix('-').unwrap_or(s);
        let (int, frac) = match body.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (body, None),
        };
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        if let Some(frac) = frac {
            if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
        }
        s.parse::<f64>().ok().and_then(Self::new)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn as_i64(self) -> Option<i64> {
        if self.0.fract() == 0.0 && self.0.abs() < 9.0e15 {
            Some(self.0 as i64)
        } else {
            None
        }
    }
}

impl From<i64> for Number {
    fn from(v: i64) -> Self {
        Self::new(v as f64).expect("finite")
    }
}

impl PartialEq for Number {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Number {}

impl Hash for Number {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state)
    }
}

impl PartialOrd for Number {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Number {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // f64's Display never uses exponent notation and prints the shortest
        // round-tripping digits.
        write!(f, "{}", self.0)
    }
}

/// Literal value; also the value type of stored entity fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Literal {
    Null,
    Bool(bool),
    Number(Number),
    String(String),
}

impl Literal {
    pub fn string(s: impl Into<String>) -> Self {
        Literal::String(s.into())
    }

    pub fn number(v: f64) -> Self {
        Literal::Number(Number::new(v).expect("finite literal"))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Literal::Null => "null",
            Literal::Bool(_) => "boolean",
            Literal::Number(_) => "number",
            Literal::String(_) => "string",
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Literal::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Literal::Number(n) => Some(n.value()),
            _ => None,
        }
    }

    /// OData URL rendering: strings single-quoted with embedded quotes doubled.
    pub fn to_odata(&self) -> String {
        match self {
            Literal::Null => "null".into(),
            Literal::Bool(b) => b.to_string(),
            Literal::Number(n) => n.to_string(),
            Literal::String(s) => format!("'{}'", s.replace('\'', "''")),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Literal::Null => serde_json::Value::Null,
            Literal::Bool(b) => serde_json::Value::Bool(*b),
            Literal::Number(n) => match n.as_i64() {
                Some(i) => serde_json::Value::from(i),
                None => serde_json::Number::from_f64(n.value())
                    .map(serde_json::Value::Number)
                    .unwrap_or(serde_json::Value::Null),
            },
            Literal::String(s) => serde_json::Value::String(s.clone()),
        }
    }

    /// Total order used for sorting: null < booleans < numbers < strings.
    /// Strings compare ordinally.
    pub fn sort_cmp(&self, other: &Self) -> Ordering {
        fn rank(l: &Literal) -> u8 {
            match l {
                Literal::Null => 0,
                Literal::Bool(_) => 1,
                Literal::Number(_) => 2,
                Literal::String(_) => 3,
            }
        }
        match (self, other) {
            (Literal::Bool(a), Literal::Bool(b)) => a.cmp(b),
            (Literal::Number(a), Literal::Number(b)) => a.cmp(b),
            (Literal::String(a), Literal::String(b)) => a.cmp(b),
            _ => rank(self).cmp(&rank(other)),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_odata())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareOp {
    Eq,
    Ne,
    Gt,
    Ge,
    Lt,
    Le,
}

impl CompareOp {
    pub const ALL: [CompareOp; 6] = [
        CompareOp::Eq,
        CompareOp::Ne,
        CompareOp::Gt,
        CompareOp::Ge,
        CompareOp::Lt,
        CompareOp::Le,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CompareOp::Eq => "eq",
            CompareOp::Ne => "ne",
            CompareOp::Gt => "gt",
            CompareOp::Ge => "ge",
            CompareOp::Lt => "lt",
            CompareOp::Le => "le",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.as_str() == s)
    }

    pub fn is_range(self) -> bool {
        matches!(self, CompareOp::Gt | CompareOp::Ge | CompareOp::Lt | CompareOp::Le)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StringFunction {
    Contains,
    StartsWith,
    EndsWith,
}

impl StringFunction {
    pub const ALL: [StringFunction; 3] = [
        StringFunction::Contains,
        StringFunction::StartsWith,
        StringFunction::EndsWith,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StringFunction::Contains => "contains",
            StringFunction::StartsWith => "startswith",
            StringFunction::EndsWith => "endswith",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

/// Boolean filter expression. `Group` records explicit parentheses: it is
/// transparent to evaluation but counts as nesting for costing.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FilterExpr {
    Comparison {
        field: FieldRef,
        op: CompareOp,
        value: Literal,
    },
    StringFn {
        func: StringFunction,
        field: FieldRef,
        value: Literal,
    },
    And(Vec<FilterExpr>),
    Or(Vec<FilterExpr>),
    Not(Box<FilterExpr>),
    Group(Box<FilterExpr>),
}

// Binding strength used when deciding where parentheses are required.
const PREC_OR: u8 = 1;
const PREC_AND: u8 = 2;
const PREC_UNARY: u8 = 3;

impl FilterExpr {
    pub fn cmp(field: FieldRef, op: CompareOp, value: Literal) -> Self {
        FilterExpr::Comparison { field, op, value }
    }

    pub fn group(inner: FilterExpr) -> Self {
        FilterExpr::Group(Box::new(inner))
    }

    pub fn not(inner: FilterExpr) -> Self {
        FilterExpr::Not(Box::new(inner))
    }

    /// Conjunction in parser shape: nested `And`s are flattened and bare `Or`
    /// operands get an explicit `Group`, so the result re-parses to itself.
    pub fn conjoin(parts: impl IntoIterator<Item = FilterExpr>) -> Option<FilterExpr> {
        let mut children = Vec::new();
        for p in parts {
            match p {
                FilterExpr::And(cs) => children.extend(cs),
                FilterExpr::Or(cs) => children.push(FilterExpr::group(FilterExpr::Or(cs))),
                other => children.push(other),
            }
        }
        match children.len() {
            0 => None,
            1 => children.pop(),
            _ => Some(FilterExpr::And(children)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            FilterExpr::Or(_) => PREC_OR,
            FilterExpr::And(_) => PREC_AND,
            _ => PREC_UNARY,
        }
    }

    /// Leaves (comparisons and string functions) in left-to-right order.
    pub fn leaves(&self) -> Vec<&FilterExpr> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a FilterExpr>) {
        match self {
            FilterExpr::Comparison { .. } | FilterExpr::StringFn { .. } => out.push(self),
            FilterExpr::And(cs) | FilterExpr::Or(cs) => {
                cs.iter().for_each(|c| c.collect_leaves(out))
            }
            FilterExpr::Not(c) | FilterExpr::Group(c) => c.collect_leaves(out),
        }
    }

    pub fn fields(&self) -> Vec<&FieldRef> {
        self.leaves()
            .into_iter()
            .map(|l| match l {
                FilterExpr::Comparison { field, .. } | FilterExpr::StringFn { field, .. } => field,
                _ => unreachable!(),
            })
            .collect()
    }

    fn write_odata(&self, out: &mut String) {
        match self {
            FilterExpr::Comparison { field, op, value } => {
                let _ = write!(out, "{} {} {}", field, op.as_str(), value.to_odata());
            }
            FilterExpr::StringFn { func, field, value } => {
                let _ = write!(out, "{}({},{})", func.as_str(), field, value.to_odata());
            }
            FilterExpr::And(cs) | FilterExpr::Or(cs) => {
                let (sep, prec) = if matches!(self, FilterExpr::And(_)) {
                    (" and ", PREC_AND)
                } else {
                    (" or ", PREC_OR)
                };
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        out.push_str(sep);
                    }
                    c.write_operand(prec, out);
                }
            }
            FilterExpr::Not(c) => {
                out.push_str("not ");
                c.write_operand(PREC_UNARY, out);
            }
            FilterExpr::Group(c) => {
                out.push('(');
                c.write_odata(out);
                out.push(')');
            }
        }
    }

    fn write_operand(&self, parent: u8, out: &mut String) {
        if self.precedence() < parent {
            out.push('(');
            self.write_odata(out);
            out.push(')');
        } else {
            self.write_odata(out);
        }
    }

    fn operand_form(&self, parent: u8) -> String {
        let mut s = String::new();
        self.write_operand(parent, &mut s);
        s
    }

    pub fn to_odata(&self) -> String {
        let mut s = String::new();
        self.write_odata(&mut s);
        s
    }

    /// Flattens same-operator nesting and sorts `And`/`Or` operands by their
    /// serialized form. `Not` and `Group` are kept as written.
    pub fn canonicalize(&self) -> FilterExpr {
        match self {
            FilterExpr::And(cs) => Self::canonical_nary(cs, true),
            FilterExpr::Or(cs) => Self::canonical_nary(cs, false),
            FilterExpr::Not(c) => FilterExpr::Not(Box::new(c.canonicalize())),
            FilterExpr::Group(c) => FilterExpr::Group(Box::new(c.canonicalize())),
            leaf => leaf.clone(),
        }
    }

    fn canonical_nary(children: &[FilterExpr], is_and: bool) -> FilterExpr {
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            match (c.canonicalize(), is_and) {
                (FilterExpr::And(inner), true) | (FilterExpr::Or(inner), false) => flat.extend(inner),
                (other, _) => flat.push(other),
            }
        }
        let prec = if is_and { PREC_AND } else { PREC_OR };
        let mut keyed: Vec<(String, FilterExpr)> =
            flat.into_iter().map(|c| (c.operand_form(prec), c)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        let sorted = keyed.into_iter().map(|(_, c)| c).collect();
        if is_and {
            FilterExpr::And(sorted)
        } else {
            FilterExpr::Or(sorted)
        }
    }

    /// Structural depth, counting every node.
    pub fn depth(&self) -> usize {
        match self {
            FilterExpr::Comparison { .. } | FilterExpr::StringFn { .. } => 1,
            FilterExpr::And(cs) | FilterExpr::Or(cs) => {
                1 + cs.iter().map(|c| c.depth()).max().unwrap_or(0)
            }
            FilterExpr::Not(c) | FilterExpr::Group(c) => 1 + c.depth(),
        }
    }
}

impl fmt::Display for FilterExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_odata())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortDirection {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OrderKey {
    pub field: FieldRef,
    pub direction: SortDirection,
}

impl OrderKey {
    pub fn asc(field: FieldRef) -> Self {
        Self {
            field,
            direction: SortDirection::Asc,
        }
    }

    pub fn desc(field: FieldRef) -> Self {
        Self {
            field,
            direction: SortDirection::Desc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExpandNode {
    pub relation: String,
    pub children: Vec<ExpandNode>,
}

impl ExpandNode {
    pub fn leaf(relation: impl Into<String>) -> Self {
        Self {
            relation: relation.into(),
            children: Vec::new(),
        }
    }

    pub fn with_children(relation: impl Into<String>, children: Vec<ExpandNode>) -> Self {
        Self {
            relation: relation.into(),
            children,
        }
    }

    /// Number of levels below and including this node.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    fn write_odata(&self, out: &mut String) {
        out.push_str(&self.relation);
        if !self.children.is_empty() {
            out.push_str("($expand=");
            write_expand_list(&self.children, out);
            out.push(')');
        }
    }

    fn canonicalize(&self) -> ExpandNode {
        let mut children: Vec<_> = self.children.iter().map(|c| c.canonicalize()).collect();
        children.sort_by(|a, b| a.relation.cmp(&b.relation));
        ExpandNode {
            relation: self.relation.clone(),
            children,
        }
    }
}

fn write_expand_list(nodes: &[ExpandNode], out: &mut String) {
    for (i, n) in nodes.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        n.write_odata(out);
    }
}

pub fn expand_depth(nodes: &[ExpandNode]) -> usize {
    nodes.iter().map(|n| n.depth()).max().unwrap_or(0)
}

/// A fully resolved read query against one entity set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Query {
    pub entity_set: String,
    pub filter: Option<FilterExpr>,
    pub order_by: Vec<OrderKey>,
    pub select: Vec<FieldRef>,
    pub expand: Vec<ExpandNode>,
    pub top: Option<u64>,
    pub skip: Option<u64>,
}

impl Query {
    pub fn new(entity_set: impl Into<String>) -> Self {
        Self {
            entity_set: entity_set.into(),
            filter: None,
            order_by: Vec::new(),
            select: Vec::new(),
            expand: Vec::new(),
            top: None,
            skip: None,
        }
    }

    pub fn with_filter(mut self, filter: FilterExpr) -> Self {
        self.filter = Some(filter);
        self
    }

    pub fn with_order(mut self, keys: Vec<OrderKey>) -> Self {
        self.order_by = keys;
        self
    }

    pub fn with_select(mut self, fields: Vec<FieldRef>) -> Self {
        self.select = fields;
        self
    }

    pub fn with_expand(mut self, expand: Vec<ExpandNode>) -> Self {
        self.expand = expand;
        self
    }

    pub fn with_top(mut self, top: u64) -> Self {
        self.top = Some(top);
        self
    }

    pub fn with_skip(mut self, skip: u64) -> Self {
        self.skip = Some(skip);
        self
    }

    /// System query options as `(name, value)` pairs in the fixed order
    /// `$filter, $select, $orderby, $top, $skip, $expand`.
    pub fn odata_options(&self) -> Vec<(&'static str, String)> {
        let mut opts = Vec::new();
        if let Some(f) = &self.filter {
            opts.push(("$filter", f.to_odata()));
        }
        if !self.select.is_empty() {
            let v: Vec<String> = self.select.iter().map(|f| f.to_string()).collect();
            opts.push(("$select", v.join(",")));
        }
        if !self.order_by.is_empty() {
            let v: Vec<String> = self
                .order_by
                .iter()
                .map(|k| match k.direction {
                    SortDirection::Asc => format!("{} asc", k.field),
                    SortDirection::Desc => format!("{} desc", k.field),
                })
                .collect();
            opts.push(("$orderby", v.join(",")));
        }
        if let Some(t) = self.top {
            opts.push(("$top", t.to_string()));
        }
        if let Some(s) = self.skip {
            opts.push(("$skip", s.to_string()));
        }
        if !self.expand.is_empty() {
            let mut s = String::new();
            write_expand_list(&self.expand, &mut s);
            opts.push(("$expand", s));
        }
        opts
    }

    /// OData v4 URL query string (not percent-encoded). Empty when no options.
    pub fn serialize_odata(&self) -> String {
        self.odata_options()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("&")
    }

    /// Same options, percent-encoded for use on the wire.
    pub fn to_url_query(&self) -> String {
        let mut ser = form_urlencoded::Serializer::new(String::new());
        for (k, v) in self.odata_options() {
            ser.append_pair(k, &v);
        }
        ser.finish().replace('+', "%20")
    }

    pub fn canonicalize(&self) -> Query {
        let mut select = self.select.clone();
        select.sort();
        let mut expand: Vec<_> = self.expand.iter().map(|e| e.canonicalize()).collect();
        expand.sort_by(|a, b| a.relation.cmp(&b.relation));
        Query {
            entity_set: self.entity_set.clone(),
            filter: self.filter.as_ref().map(|f| f.canonicalize()),
            order_by: self.order_by.clone(),
            select,
            expand,
            top: self.top,
            skip: self.skip,
        }
    }

    /// Lowercase hex SHA-256 of `entitySet?canonical-odata`.
    pub fn cache_key(&self) -> String {
        let canonical = self.canonicalize();
        let mut hasher = Sha256::new();
        hasher.update(self.entity_set.as_bytes());
        hasher.update(b"?");
        hasher.update(canonical.serialize_odata().as_bytes());
        hex::encode(hasher.finalize())
    }
}
