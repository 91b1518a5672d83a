//! Reference evaluator over an [`EntityStore`].
//!
//! Applies filter, then a stable multi-key sort, skip, top, projection and
//! finally expand embedding. String comparison is ordinal and the string
//! functions are case-sensitive.

use std::cmp::Ordering;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::ast::{
    CompareOp, ExpandNode, FieldRef, FilterExpr, Literal, Query, SortDirection, StringFunction,
};
use crate::model::{Cardinality, EntityModel, PropertyType};
use crate::store::{Entity, EntityStore, EntityTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown entity set `{0}`")]
    UnknownEntitySet(String),
    #[error("unknown field `{field}` on `{set}`")]
    UnknownField { set: String, field: String },
    #[error("type mismatch: `{field}` is {expected} but compared with {found}")]
    TypeMismatch {
        field: String,
        expected: String,
        found: String,
    },
    #[error("unknown relation `{relation}` on `{set}`")]
    UnknownRelation { set: String, relation: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Embedded {
    One(Option<Box<ResultEntity>>),
    Many(Vec<ResultEntity>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultEntity {
    pub id: i64,
    pub fields: Vec<(String, Literal)>,
    pub expanded: Vec<(String, Embedded)>,
}

impl ResultEntity {
    pub fn get(&self, name: &str) -> Option<&Literal> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        for (k, v) in &self.fields {
            obj.insert(k.clone(), v.to_json());
        }
        for (k, e) in &self.expanded {
            let v = match e {
                Embedded::One(Some(r)) => r.to_json(),
                Embedded::One(None) => Value::Null,
                Embedded::Many(rs) => Value::Array(rs.iter().map(|r| r.to_json()).collect()),
            };
            obj.insert(k.clone(), v);
        }
        Value::Object(obj)
    }
}

/// `{"value": [...]}` response body for a result list.
pub fn results_to_json(rows: &[ResultEntity]) -> Value {
    let mut obj = Map::new();
    obj.insert("value".into(), Value::Array(rows.iter().map(|r| r.to_json()).collect()));
    Value::Object(obj)
}

/// A field path resolved to relation hops and a property slot.
struct Path<'s> {
    hops: Vec<(usize, &'s EntityTable)>,
    prop: usize,
}

impl<'s> Path<'s> {
    fn resolve(
        model: &EntityModel,
        store: &'s EntityStore,
        set: &str,
        field: &FieldRef,
    ) -> Result<(Self, PropertyType), EvalError> {
        let unknown = || EvalError::UnknownField {
            set: set.to_string(),
            field: field.to_string(),
        };
        let mut def = model.entity_set(set).ok_or_else(unknown)?;
        let segs = field.segments();
        let mut hops = Vec::new();
        for seg in &segs[..segs.len() - 1] {
            let ri = def.relation_index(seg).ok_or_else(unknown)?;
            let rel = &def.relations[ri];
            if rel.cardinality != Cardinality::OneToOne {
                return Err(unknown());
            }
            hops.push((ri, store.table(&rel.target).ok_or_else(unknown)?));
            def = model.entity_set(&rel.target).ok_or_else(unknown)?;
        }
        let prop = def.property_index(field.property()).ok_or_else(unknown)?;
        Ok((Self { hops, prop }, def.properties[prop].ty))
    }

    fn value<'e>(&self, mut e: &'e Entity) -> &'e Literal
    where
        's: 'e,
    {
        static NULL: Literal = Literal::Null;
        for (ri, table) in &self.hops {
            match e.links[*ri].first().and_then(|id| table.get(*id)) {
                Some(next) => e = next,
                None => return &NULL,
            }
        }
        &e.values[self.prop]
    }
}

enum Predicate<'s> {
    Cmp {
        path: Path<'s>,
        op: CompareOp,
        value: Literal,
    },
    Str {
        path: Path<'s>,
        func: StringFunction,
        needle: String,
    },
    And(Vec<Predicate<'s>>),
    Or(Vec<Predicate<'s>>),
    Not(Box<Predicate<'s>>),
}

fn type_matches(ty: PropertyType, lit: &Literal) -> bool {
    matches!(
        (ty, lit),
        (_, Literal::Null)
            | (PropertyType::Number, Literal::Number(_))
            | (PropertyType::String, Literal::String(_))
            | (PropertyType::Boolean, Literal::Bool(_))
    )
}

fn compile<'s>(
    model: &EntityModel,
    store: &'s EntityStore,
    set: &str,
    expr: &FilterExpr,
) -> Result<Predicate<'s>, EvalError> {
    Ok(match expr {
        FilterExpr::Comparison { field, op, value } => {
            let (path, ty) = Path::resolve(model, store, set, field)?;
            if !type_matches(ty, value) {
                return Err(EvalError::TypeMismatch {
                    field: field.to_string(),
                    expected: ty.to_string(),
                    found: value.kind().to_string(),
                });
            }
            Predicate::Cmp {
                path,
                op: *op,
                value: value.clone(),
            }
        }
        FilterExpr::StringFn { func, field, value } => {
            let (path, ty) = Path::resolve(model, store, set, field)?;
            let needle = match (ty, value) {
                (PropertyType::String, Literal::String(s)) => s.clone(),
                (PropertyType::String, other) => {
                    return Err(EvalError::TypeMismatch {
                        field: field.to_string(),
                        expected: "string".into(),
                        found: other.kind().into(),
                    })
                }
                (ty, _) => {
                    return Err(EvalError::TypeMismatch {
                        field: field.to_string(),
                        expected: ty.to_string(),
                        found: "string".into(),
                    })
                }
            };
            Predicate::Str {
                path,
                func: *func,
                needle,
            }
        }
        FilterExpr::And(cs) => Predicate::And(
            cs.iter()
                .map(|c| compile(model, store, set, c))
                .collect::<Result<_, _>>()?,
        ),
        FilterExpr::Or(cs) => Predicate::Or(
            cs.iter()
                .map(|c| compile(model, store, set, c))
                .collect::<Result<_, _>>()?,
        ),
        FilterExpr::Not(c) => Predicate::Not(Box::new(compile(model, store, set, c)?)),
        FilterExpr::Group(c) => compile(model, store, set, c)?,
    })
}

/// OData comparison: `eq`/`ne` treat null as a value; ordering comparisons
/// involving null are false.
pub fn compare(field: &Literal, op: CompareOp, value: &Literal) -> bool {
    match op {
        CompareOp::Eq => field == value,
        CompareOp::Ne => field != value,
        _ => {
            if matches!(field, Literal::Null) || matches!(value, Literal::Null) {
                return false;
            }
            let ord = field.sort_cmp(value);
            match op {
                CompareOp::Gt => ord == Ordering::Greater,
                CompareOp::Ge => ord != Ordering::Less,
                CompareOp::Lt => ord == Ordering::Less,
                CompareOp::Le => ord != Ordering::Greater,
                CompareOp::Eq | CompareOp::Ne => unreachable!(),
            }
        }
    }
}

pub fn string_match(func: StringFunction, haystack: &str, needle: &str) -> bool {
    match func {
        StringFunction::Contains => haystack.contains(needle),
        StringFunction::StartsWith => haystack.starts_with(needle),
        StringFunction::EndsWith => haystack.ends_with(needle),
    }
}

impl Predicate<'_> {
    fn test(&self, e: &Entity) -> bool {
        match self {
            Predicate::Cmp { path, op, value } => compare(path.value(e), *op, value),
            Predicate::Str { path, func, needle } => match path.value(e) {
                Literal::String(s) => string_match(*func, s, needle),
                _ => false,
            },
            Predicate::And(cs) => cs.iter().all(|c| c.test(e)),
            Predicate::Or(cs) => cs.iter().any(|c| c.test(e)),
            Predicate::Not(c) => !c.test(e),
        }
    }
}

fn full_record(model: &EntityModel, set: &str, e: &Entity) -> ResultEntity {
    let def = model.entity_set(set).expect("known set");
    ResultEntity {
        id: e.id,
        fields: def
            .properties
            .iter()
            .zip(&e.values)
            .map(|(p, v)| (p.name.clone(), v.clone()))
            .collect(),
        expanded: Vec::new(),
    }
}

fn embed(
    model: &EntityModel,
    store: &EntityStore,
    set: &str,
    e: &Entity,
    nodes: &[ExpandNode],
    out: &mut ResultEntity,
) -> Result<(), EvalError> {
    let def = model
        .entity_set(set)
        .ok_or_else(|| EvalError::UnknownEntitySet(set.to_string()))?;
    for node in nodes {
        let ri = def
            .relation_index(&node.relation)
            .ok_or_else(|| EvalError::UnknownRelation {
                set: set.to_string(),
                relation: node.relation.clone(),
            })?;
        let rel = &def.relations[ri];
        let target = store
            .table(&rel.target)
            .ok_or_else(|| EvalError::UnknownEntitySet(rel.target.clone()))?;
        let mut related = Vec::new();
        for id in &e.links[ri] {
            if let Some(t) = target.get(*id) {
                let mut r = full_record(model, &rel.target, t);
                embed(model, store, &rel.target, t, &node.children, &mut r)?;
                related.push(r);
            }
        }
        let value = match rel.cardinality {
            Cardinality::OneToOne => Embedded::One(related.into_iter().next().map(Box::new)),
            Cardinality::OneToMany => Embedded::Many(related),
        };
        out.expanded.push((rel.name.clone(), value));
    }
    Ok(())
}

pub fn evaluate(q: &Query, store: &EntityStore) -> Result<Vec<ResultEntity>, EvalError> {
    let model = store.model().clone();
    let set = q.entity_set.as_str();
    let def = model
        .entity_set(set)
        .ok_or_else(|| EvalError::UnknownEntitySet(set.to_string()))?;
    let table = store
        .table(set)
        .ok_or_else(|| EvalError::UnknownEntitySet(set.to_string()))?;

    let predicate = q
        .filter
        .as_ref()
        .map(|f| compile(&model, store, set, f))
        .transpose()?;
    let mut rows: Vec<&Entity> = table
        .iter()
        .filter(|e| predicate.as_ref().is_none_or(|p| p.test(e)))
        .collect();

    if !q.order_by.is_empty() {
        let keys = q
            .order_by
            .iter()
            .map(|k| Path::resolve(&model, store, set, &k.field).map(|(p, _)| (p, k.direction)))
            .collect::<Result<Vec<_>, _>>()?;
        rows.sort_by(|a, b| {
            for (path, dir) in &keys {
                let ord = path.value(a).sort_cmp(path.value(b));
                let ord = match dir {
                    SortDirection::Asc => ord,
                    SortDirection::Desc => ord.reverse(),
                };
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            Ordering::Equal
        });
    }

    let skip = q.skip.unwrap_or(0) as usize;
    let top = q.top.map_or(usize::MAX, |t| t as usize);

    let projection: Option<Vec<usize>> = if q.select.is_empty() {
        None
    } else {
        let mut idx = vec![def.key_index()];
        for f in &q.select {
            let i = def
                .property_index(f.property())
                .filter(|_| f.is_simple())
                .ok_or_else(|| EvalError::UnknownField {
                    set: set.to_string(),
                    field: f.to_string(),
                })?;
            if !idx.contains(&i) {
                idx.push(i);
            }
        }
        Some(idx)
    };

    rows.into_iter()
        .skip(skip)
        .take(top)
        .map(|e| {
            let mut r = match &projection {
                None => full_record(&model, set, e),
                Some(idx) => ResultEntity {
                    id: e.id,
                    fields: idx
                        .iter()
                        .map(|&i| (def.properties[i].name.clone(), e.values[i].clone()))
                        .collect(),
                    expanded: Vec::new(),
                },
            };
            embed(&model, store, set, e, &q.expand, &mut r)?;
            Ok(r)
        })
        .collect()
}

/// Number of entities matching the filter, ignoring paging.
pub fn count_matches(q: &Query, store: &EntityStore) -> Result<usize, EvalError> {
    let mut bare = Query::new(q.entity_set.clone());
    bare.filter = q.filter.clone();
    let model = store.model().clone();
    let table = store
        .table(&q.entity_set)
        .ok_or_else(|| EvalError::UnknownEntitySet(q.entity_set.clone()))?;
    let predicate = bare
        .filter
        .as_ref()
        .map(|f| compile(&model, store, &q.entity_set, f))
        .transpose()?;
    Ok(table
        .iter()
        .filter(|e| predicate.as_ref().is_none_or(|p| p.test(e)))
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{FieldRef, OrderKey};
    use crate::parser::traditional::{parse_query_params, split_options};
    use serde_json::json;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn store() -> EntityStore {
        let model = Arc::new(crate::datagen::ecommerce_model());
        let mut records = BTreeMap::new();
        records.insert(
            "Products".to_string(),
            vec![
                json!({"Id": 1, "Name": "Phone X", "Category": "Electronics", "Price": 700, "Reviews": [1, 2], "Supplier": [1]}),
                json!({"Id": 2, "Name": "Novel", "Category": "Books", "Price": 15}),
                json!({"Id": 3, "Name": "Tablet", "Category": "Electronics", "Price": 300, "Supplier": [2]}),
                json!({"Id": 4, "Name": "Cable", "Category": "Electronics", "Price": 9}),
                json!({"Id": 5, "Name": "Mystery", "Category": null, "Price": null}),
            ],
        );
        records.insert(
            "Reviews".to_string(),
            vec![
                json!({"Id": 1, "Rating": 5, "Author": [1]}),
                json!({"Id": 2, "Rating": 2}),
            ],
        );
        records.insert("Users".to_string(), vec![json!({"Id": 1, "Name": "Ann"})]);
        records.insert(
            "Suppliers".to_string(),
            vec![json!({"Id": 1, "Country": "DE"}), json!({"Id": 2, "Country": "US"})],
        );
        EntityStore::from_records(model, records).unwrap()
    }

    fn run(s: &EntityStore, qs: &str) -> Result<Vec<ResultEntity>, EvalError> {
        let q = parse_query_params(&split_options(qs), s.model(), "Products").unwrap();
        evaluate(&q, s)
    }

    fn ids(rows: &[ResultEntity]) -> Vec<i64> {
        rows.iter().map(|r| r.id).collect()
    }

    #[test]
    fn no_options_returns_everything_in_order() {
        let s = store();
        assert_eq!(ids(&run(&s, "").unwrap()), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn filter_sort_top_select() {
        let s = store();
        let rows = run(
            &s,
            "$filter=Price gt 100 and Category eq 'Electronics'&$select=Name,Price&$orderby=Price desc&$top=10",
        )
        .unwrap();
        assert_eq!(ids(&rows), vec![1, 3]);
        let names: Vec<&str> = rows[0].fields.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["Id", "Name", "Price"]);
    }

    #[test]
    fn null_semantics() {
        let s = store();
        assert_eq!(ids(&run(&s, "$filter=Price eq null").unwrap()), vec![5]);
        assert_eq!(ids(&run(&s, "$filter=Price ne null").unwrap()), vec![1, 2, 3, 4]);
        assert_eq!(ids(&run(&s, "$filter=Price lt 1000").unwrap()), vec![1, 2, 3, 4]);
        assert_eq!(ids(&run(&s, "$filter=Category ne 'Books'").unwrap()), vec![1, 3, 4, 5]);
        // nulls sort first ascending
        assert_eq!(ids(&run(&s, "$orderby=Price").unwrap()), vec![5, 4, 2, 3, 1]);
        assert_eq!(ids(&run(&s, "$orderby=Price desc").unwrap()), vec![1, 3, 2, 4, 5]);
    }

    #[test]
    fn string_functions_are_case_sensitive() {
        let s = store();
        assert_eq!(ids(&run(&s, "$filter=contains(Name,'o')").unwrap()), vec![1, 2]);
        assert_eq!(ids(&run(&s, "$filter=contains(Name,'O')").unwrap()), Vec::<i64>::new());
        assert_eq!(ids(&run(&s, "$filter=startswith(Name,'Ta')").unwrap()), vec![3]);
        assert_eq!(ids(&run(&s, "$filter=endswith(Name,'X')").unwrap()), vec![1]);
    }

    #[test]
    fn stable_multikey_sort_and_paging() {
        let s = store();
        let rows = run(&s, "$orderby=Category desc,Price asc&$skip=1&$top=2").unwrap();
        assert_eq!(ids(&rows), vec![3, 1]);
    }

    #[test]
    fn type_mismatch() {
        let s = store();
        assert!(matches!(run(&s, "$filter=Price eq 'cheap'"), Err(EvalError::TypeMismatch { .. })));
        assert!(matches!(run(&s, "$filter=contains(Price,'1')"), Err(EvalError::TypeMismatch { .. })));
    }

    #[test]
    fn expand_embeds_related_entities() {
        let s = store();
        let rows = run(&s, "$filter=Id eq 1&$expand=Reviews($expand=Author),Supplier").unwrap();
        let json = rows[0].to_json();
        assert_eq!(json["Reviews"].as_array().unwrap().len(), 2);
        assert_eq!(json["Reviews"][0]["Author"]["Name"], "Ann");
        assert_eq!(json["Reviews"][1]["Author"], Value::Null);
        assert_eq!(json["Supplier"]["Country"], "DE");
    }

    #[test]
    fn navigation_filter_and_sort() {
        let s = store();
        assert_eq!(ids(&run(&s, "$filter=Supplier/Country eq 'US'").unwrap()), vec![3]);
        let q = Query::new("Products")
            .with_filter(FilterExpr::cmp(
                FieldRef::simple("Category"),
                CompareOp::Eq,
                Literal::string("Electronics"),
            ))
            .with_order(vec![OrderKey::desc(FieldRef::new(vec![
                "Supplier".into(),
                "Country".into(),
            ]))]);
        assert_eq!(ids(&evaluate(&q, &s).unwrap()), vec![3, 1, 4]);
    }

    #[test]
    fn count_ignores_paging() {
        let s = store();
        let q = parse_query_params(&split_options("$filter=Price gt 10&$top=1"), s.model(), "Products").unwrap();
        assert_eq!(count_matches(&q, &s).unwrap(), 3);
    }
}
