//! Server-side named queries: aliases for parameterized OData templates.
//!
//! Clients call `?query=<name>&<param>=<value>`. Each `{param}` placeholder
//! must sit inside a quoted string literal; values are substituted with
//! single quotes doubled, so a value can never leave its literal.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use arc_swap::ArcSwap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::{FilterExpr, Literal, Query};
use crate::model::EntityModel;
use crate::parser::traditional::split_options;
use crate::parser::{parse_traditional_params, QueryError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NamedQueryDef {
    pub name: String,
    pub template: String,
    #[serde(default)]
    pub parameters: Vec<String>,
    #[serde(default = "default_true")]
    pub cacheable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_limit: Option<f64>,
    /// Restricts the alias to one entity set. Without it the alias may be
    /// invoked on any set whose fields the template names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_set: Option<String>,
}

fn default_true() -> bool {
    true
}

impl NamedQueryDef {
    pub fn new(name: impl Into<String>, template: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            template: template.into(),
            parameters: Vec::new(),
            cacheable: true,
            cost_limit: None,
            entity_set: None,
        }
    }

    pub fn with_parameters(mut self, params: &[&str]) -> Self {
        self.parameters = params.iter().map(|p| p.to_string()).collect();
        self
    }

    pub fn with_cost_limit(mut self, limit: f64) -> Self {
        self.cost_limit = Some(limit);
        self
    }

    pub fn with_cacheable(mut self, cacheable: bool) -> Self {
        self.cacheable = cacheable;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NamedQueryError {
    #[error("named query `{0}` is already registered")]
    DuplicateName(String),
    #[error("invalid named query name `{0}`: use letters, digits, `-` and `_`")]
    InvalidName(String),
    #[error("invalid template for `{name}`: {reason}")]
    InvalidTemplate { name: String, reason: String },
    #[error("placeholders of `{name}` do not match its parameters: {reason}")]
    PlaceholderMismatch { name: String, reason: String },
    #[error("unknown named query `{0}`")]
    UnknownNamedQuery(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParameter(String),
    #[error("named query `{name}` is bound to entity set `{expected}`, not `{actual}`")]
    WrongEntitySet {
        name: String,
        expected: String,
        actual: String,
    },
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("cannot load registry: {0}")]
    Load(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Param(String),
}

/// A template option whose value may contain placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
struct TemplateOption {
    key: String,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone)]
pub struct CompiledQuery {
    pub def: NamedQueryDef,
    options: Vec<TemplateOption>,
}

/// Execution hints carried by an expanded named query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryHints {
    pub name: String,
    pub cacheable: bool,
    pub cost_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedQuery {
    pub query: Query,
    pub hints: QueryHints,
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn scan_segments(name: &str, value: &str) -> Result<Vec<Segment>, NamedQueryError> {
    let invalid = |reason: String| NamedQueryError::InvalidTemplate {
        name: name.to_string(),
        reason,
    };
    let mut out = Vec::new();
    let mut text = String::new();
    let mut rest = value;
    while let Some(open) = rest.find(['{', '}']) {
        if rest[open..].starts_with('}') {
            return Err(invalid("unmatched `}`".into()));
        }
        text.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| invalid("unterminated `{`".into()))?;
        let param = &after[..close];
        if !is_identifier(param) {
            return Err(invalid(format!("`{{{param}}}` is not a placeholder name")));
        }
        if !text.is_empty() {
            out.push(Segment::Text(std::mem::take(&mut text)));
        }
        out.push(Segment::Param(param.to_string()));
        rest = &after[close + 1..];
    }
    text.push_str(rest);
    if !text.is_empty() {
        out.push(Segment::Text(text));
    }
    Ok(out)
}

/// Doubles single quotes so the value stays inside a `'...'` literal.
pub fn escape_value(v: &str) -> String {
    v.replace('\'', "''")
}

fn substitute(options: &[TemplateOption], args: &BTreeMap<String, String>) -> Vec<(String, String)> {
    options
        .iter()
        .map(|o| {
            let mut value = String::new();
            for s in &o.segments {
                match s {
                    Segment::Text(t) => value.push_str(t),
                    Segment::Param(p) => value.push_str(&escape_value(&args[p])),
                }
            }
            (o.key.clone(), value)
        })
        .collect()
}

fn string_literals(f: &FilterExpr, out: &mut Vec<String>) {
    match f {
        FilterExpr::Comparison { value, .. } | FilterExpr::StringFn { value, .. } => {
            if let Literal::String(s) = value {
                out.push(s.clone());
            }
        }
        FilterExpr::And(cs) | FilterExpr::Or(cs) => cs.iter().for_each(|c| string_literals(c, out)),
        FilterExpr::Not(c) | FilterExpr::Group(c) => string_literals(c, out),
    }
}

/// All string literal values of a query's filter, in tree order.
pub fn filter_string_literals(q: &Query) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(f) = &q.filter {
        string_literals(f, &mut out);
    }
    out
}

impl CompiledQuery {
    pub fn compile(def: NamedQueryDef, model: &EntityModel) -> Result<Self, NamedQueryError> {
        if !is_identifier(&def.name) {
            return Err(NamedQueryError::InvalidName(def.name.clone()));
        }
        if let Some(limit) = def.cost_limit {
            if !(limit > 0.0 && limit.is_finite()) {
                return Err(NamedQueryError::InvalidTemplate {
                    name: def.name.clone(),
                    reason: format!("costLimit must be positive, got {limit}"),
                });
            }
        }
        let options = split_options(&def.template)
            .into_iter()
            .map(|(key, value)| {
                Ok(TemplateOption {
                    segments: scan_segments(&def.name, &value)?,
                    key,
                })
            })
            .collect::<Result<Vec<_>, NamedQueryError>>()?;
        if options.iter().any(|o| o.key.contains(['{', '}'])) {
            return Err(NamedQueryError::InvalidTemplate {
                name: def.name.clone(),
                reason: "placeholders are only allowed in option values".into(),
            });
        }

        let placeholders: BTreeSet<&str> = options
            .iter()
            .flat_map(|o| &o.segments)
            .filter_map(|s| match s {
                Segment::Param(p) => Some(p.as_str()),
                Segment::Text(_) => None,
            })
            .collect();
        let declared: BTreeSet<&str> = def.parameters.iter().map(String::as_str).collect();
        let mismatch = |reason: String| NamedQueryError::PlaceholderMismatch {
            name: def.name.clone(),
            reason,
        };
        if declared.len() != def.parameters.len() {
            return Err(mismatch("parameter declared twice".into()));
        }
        if let Some(p) = placeholders.difference(&declared).next() {
            return Err(mismatch(format!("`{{{p}}}` is not a declared parameter")));
        }
        if let Some(p) = declared.difference(&placeholders).next() {
            return Err(mismatch(format!("parameter `{p}` is never used")));
        }

        let compiled = Self { def, options };
        compiled.probe(model)?;
        Ok(compiled)
    }

    /// Substitutes a quote-bearing marker for every parameter and checks the
    /// result parses with each marker confined to string literals.
    fn probe(&self, model: &EntityModel) -> Result<(), NamedQueryError> {
        let args: BTreeMap<String, String> = self
            .def
            .parameters
            .iter()
            .map(|p| (p.clone(), format!("'probe{{{p}}}'")))
            .collect();
        let params = substitute(&self.options, &args);
        let sets: Vec<String> = match &self.def.entity_set {
            Some(s) => vec![s.clone()],
            None => model.entity_sets().map(|d| d.name.clone()).collect(),
        };
        let invalid = |reason: String| NamedQueryError::InvalidTemplate {
            name: self.def.name.clone(),
            reason,
        };
        let mut first_err = None;
        for set in &sets {
            match parse_traditional_params(&params, model, set) {
                Ok(frag) => {
                    let q = frag.into_query(set);
                    let literals = filter_string_literals(&q);
                    for (p, v) in &args {
                        if !literals.iter().any(|l| l.contains(v.as_str())) {
                            return Err(invalid(format!(
                                "placeholder `{{{p}}}` must appear inside a quoted string in $filter"
                            )));
                        }
                    }
                    return Ok(());
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        Err(match first_err {
            Some(e) => invalid(format!("template does not parse: {e}")),
            None => invalid("entity model has no entity sets".into()),
        })
    }

    pub fn expand(
        &self,
        args: &BTreeMap<String, String>,
        model: &EntityModel,
        set: &str,
    ) -> Result<ExpandedQuery, NamedQueryError> {
        if let Some(expected) = &self.def.entity_set {
            if expected != set {
                return Err(NamedQueryError::WrongEntitySet {
                    name: self.def.name.clone(),
                    expected: expected.clone(),
                    actual: set.to_string(),
                });
            }
        }
        for p in &self.def.parameters {
            if !args.contains_key(p) {
                return Err(NamedQueryError::MissingParameter(p.clone()));
            }
        }
        if let Some(extra) = args.keys().find(|k| !self.def.parameters.contains(k)) {
            return Err(NamedQueryError::UnexpectedParameter(extra.clone()));
        }
        let params = substitute(&self.options, args);
        let query = parse_traditional_params(&params, model, set)?.into_query(set);
        Ok(ExpandedQuery {
            query,
            hints: QueryHints {
                name: self.def.name.clone(),
                cacheable: self.def.cacheable,
                cost_limit: self.def.cost_limit,
            },
        })
    }
}

/// Immutable registry contents.
#[derive(Debug, Clone, Default)]
pub struct RegistrySnapshot {
    pub version: u64,
    pub queries: BTreeMap<String, Arc<CompiledQuery>>,
}

/// Read-mostly registry: lookups load a snapshot without blocking; writers
/// serialize on a mutex and publish a new snapshot.
pub struct NamedQueryRegistry {
    model: Arc<EntityModel>,
    snapshot: ArcSwap<RegistrySnapshot>,
    writer: Mutex<()>,
}

impl NamedQueryRegistry {
    pub fn new(model: Arc<EntityModel>) -> Self {
        Self {
            model,
            snapshot: ArcSwap::from_pointee(RegistrySnapshot::default()),
            writer: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<RegistrySnapshot> {
        self.snapshot.load_full()
    }

    pub fn version(&self) -> u64 {
        self.snapshot.load().version
    }

    pub fn len(&self) -> usize {
        self.snapshot.load().queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<Arc<CompiledQuery>> {
        self.snapshot.load().queries.get(name).cloned()
    }

    pub fn definitions(&self) -> Vec<NamedQueryDef> {
        self.snapshot.load().queries.values().map(|c| c.def.clone()).collect()
    }

    pub fn register(&self, def: NamedQueryDef) -> Result<(), NamedQueryError> {
        self.register_all(vec![def], false).map(|_| ())
    }

    pub fn register_replace(&self, def: NamedQueryDef) -> Result<(), NamedQueryError> {
        self.register_all(vec![def], true).map(|_| ())
    }

    /// Registers every definition or none of them.
    pub fn register_all(&self, defs: Vec<NamedQueryDef>, replace: bool) -> Result<usize, NamedQueryError> {
        let _guard = self.writer.lock();
        let current = self.snapshot.load_full();
        let mut queries = current.queries.clone();
        let mut fresh = BTreeSet::new();
        let n = defs.len();
        for def in defs {
            let name = def.name.clone();
            if !fresh.insert(name.clone()) || (!replace && queries.contains_key(&name)) {
                return Err(NamedQueryError::DuplicateName(name));
            }
            queries.insert(name, Arc::new(CompiledQuery::compile(def, &self.model)?));
        }
        self.snapshot.store(Arc::new(RegistrySnapshot {
            version: current.version + 1,
            queries,
        }));
        Ok(n)
    }

    pub fn load_registry(&self, path: impl AsRef<Path>) -> Result<usize, NamedQueryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| NamedQueryError::Load(format!("{}: {e}", path.display())))?;
        self.load_registry_str(&text)
    }

    pub fn load_registry_str(&self, text: &str) -> Result<usize, NamedQueryError> {
        let defs: Vec<NamedQueryDef> =
            serde_json::from_str(text).map_err(|e| NamedQueryError::Load(e.to_string()))?;
        self.register_all(defs, false)
    }

    pub fn expand(
        &self,
        name: &str,
        args: &BTreeMap<String, String>,
        set: &str,
    ) -> Result<ExpandedQuery, NamedQueryError> {
        let q = self
            .get(name)
            .ok_or_else(|| NamedQueryError::UnknownNamedQuery(name.to_string()))?;
        q.expand(args, &self.model, set)
    }
}

/// The two aliases used as running examples throughout the docs.
pub fn example_definitions() -> Vec<NamedQueryDef> {
    vec![
        NamedQueryDef::new(
            "affordableBooks",
            "$filter=Price lt 20 and Category eq 'Books'&$orderby=Rating desc",
        )
        .with_cost_limit(100.0),
        NamedQueryDef::new(
            "topRatedInCategory",
            "$filter=Category eq '{category}'&$orderby=Rating desc&$top=10",
        )
        .with_parameters(&["category"]),
    ]
}
