//! Query parsers for the traditional `$`-option syntax and the simplified
//! dollar-free syntax, plus the merge of the two.

mod lexer;
pub mod simplified;
pub mod traditional;

use thiserror::Error;

use crate::ast::{ExpandNode, FieldRef, FilterExpr, OrderKey, Query};

pub use simplified::{
    merge, parse_simplified_filter, parse_simplified_params, parse_simplified_select,
    parse_simplified_sort, Merged,
};
pub use traditional::{
    parse_expand, parse_filter, parse_orderby, parse_query_params, parse_select,
    parse_traditional_params,
};

/// Syntax error with a zero-based character offset into `input`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at position {position}: expected {expected}")]
pub struct ParseError {
    pub input: String,
    pub position: usize,
    pub expected: String,
    pub message: String,
}

impl ParseError {
    pub fn new(
        input: &str,
        position: usize,
        expected: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        let len = input.chars().count();
        Self {
            input: input.to_string(),
            position: position.min(len),
            expected: expected.into(),
            message: message.into(),
        }
    }

    /// The input followed by a caret line pointing at the error position.
    pub fn caret(&self) -> String {
        format!("{}\n{}^", self.input, " ".repeat(self.position))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("query option `{0}` given more than once")]
    DuplicateOption(String),
    #[error("unknown system query option `{0}`")]
    UnknownOption(String),
    #[error("`{option}` must be a non-negative integer, got `{value}`")]
    Range { option: String, value: String },
    #[error("field `{0}` selected more than once")]
    DuplicateField(String),
    #[error("relation `{0}` expanded more than once at the same level")]
    DuplicateExpand(String),
    #[error("{construct} is not supported in simplified syntax (position {position})")]
    UnsupportedConstruct { construct: String, position: usize },
    #[error("unknown entity set `{0}`")]
    UnknownEntitySet(String),
}

impl QueryError {
    /// Error position, when the error points into an input string.
    pub fn position(&self) -> Option<usize> {
        match self {
            QueryError::Parse(e) => Some(e.position),
            QueryError::UnsupportedConstruct { position, .. } => Some(*position),
            _ => None,
        }
    }
}

/// Options contributed by one syntax. `None` means the option was absent,
/// which matters when two fragments are merged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryFragment {
    pub filter: Option<FilterExpr>,
    pub order_by: Option<Vec<OrderKey>>,
    pub select: Option<Vec<FieldRef>>,
    pub expand: Option<Vec<ExpandNode>>,
    pub top: Option<u64>,
    pub skip: Option<u64>,
}

impl QueryFragment {
    pub fn is_empty(&self) -> bool {
        *self == QueryFragment::default()
    }

    pub fn into_query(self, entity_set: &str) -> Query {
        Query {
            entity_set: entity_set.to_string(),
            filter: self.filter,
            order_by: self.order_by.unwrap_or_default(),
            select: self.select.unwrap_or_default(),
            expand: self.expand.unwrap_or_default(),
            top: self.top,
            skip: self.skip,
        }
    }

    pub fn from_query(q: Query) -> Self {
        Self {
            filter: q.filter,
            order_by: (!q.order_by.is_empty()).then_some(q.order_by),
            select: (!q.select.is_empty()).then_some(q.select),
            expand: (!q.expand.is_empty()).then_some(q.expand),
            top: q.top,
            skip: q.skip,
        }
    }
}

/// Parses a raw, undecoded option string that may mix both syntaxes, as a
/// developer would type it: `filter=price<20,category:Books&$top=5`.
pub fn parse_mixed(raw: &str, model: &crate::model::EntityModel, set: &str) -> Result<Merged, QueryError> {
    let params = traditional::split_options(raw);
    let trad = parse_traditional_params(&params, model, set)?;
    let simp = parse_simplified_params(&params, model, set)?;
    Ok(merge(simp, trad, set))
}

pub(crate) fn parse_count(option: &str, value: &str) -> Result<u64, QueryError> {
    let v = value.trim();
    if !v.is_empty() && v.bytes().all(|b| b.is_ascii_digit()) {
        if let Ok(n) = v.parse::<u64>() {
            return Ok(n);
        }
    }
    Err(QueryError::Range {
        option: option.to_string(),
        value: value.to_string(),
    })
}
