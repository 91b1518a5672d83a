//! ODataX: a dual-syntax OData v4 query layer.
//!
//! Both the traditional `$filter`/`$orderby` syntax and the simplified
//! `filter=Price>100,Category:Books` syntax parse into one [`ast::Query`].
//! On top of that AST sit the named-query registry, the cost model, the
//! query-aware cache and the HTTP gateway.

pub mod ast;
pub mod bench;
pub mod cache;
pub mod cli;
pub mod conformance;
pub mod cost;
pub mod datagen;
pub mod evaluator;
pub mod gateway;
pub mod model;
pub mod named;
pub mod parser;
pub mod stats;
pub mod store;

pub use ast::{FieldRef, FilterExpr, Literal, Query};
pub use model::EntityModel;
pub use parser::{parse_query_params, QueryError};
