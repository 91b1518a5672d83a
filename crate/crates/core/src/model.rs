//! Entity model: entity sets, typed properties and relations.
//!
//! The model is loaded from a small JSON document rather than OData
//! `$metadata` XML:
//!
//! ```json
//! {
//!   "entitySets": [
//!     {
//!       "name": "Products",
//!       "key": "Id",
//!       "properties": [{ "name": "Id", "type": "number" }, { "name": "Name", "type": "string" }],
//!       "relations": [{ "name": "Reviews", "target": "Reviews", "cardinality": "one-to-many" }]
//!     }
//!   ]
//! }
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::FieldRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyType {
    Number,
    String,
    Boolean,
}

impl fmt::Display for PropertyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PropertyType::Number => "number",
            PropertyType::String => "string",
            PropertyType::Boolean => "boolean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cardinality {
    #[serde(rename = "one-to-one")]
    OneToOne,
    #[serde(rename = "one-to-many")]
    OneToMany,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: PropertyType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationDef {
    pub name: String,
    pub target: String,
    pub cardinality: Cardinality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySetDef {
    pub name: String,
    #[serde(default = "default_key")]
    pub key: String,
    pub properties: Vec<PropertyDef>,
    #[serde(default)]
    pub relations: Vec<RelationDef>,
}

fn default_key() -> String {
    "Id".to_string()
}

impl EntitySetDef {
    pub fn property_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p.name == name)
    }

    /// Case-insensitive property lookup; returns the declared definition.
    pub fn property_ci(&self, name: &str) -> Option<&PropertyDef> {
        self.properties
            .iter()
            .find(|p| p.name.eq_ignore_ascii_case(name))
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }

    pub fn relation_ci(&self, name: &str) -> Option<&RelationDef> {
        self.relations
            .iter()
            .find(|r| r.name.eq_ignore_ascii_case(name))
    }

    pub fn relation(&self, name: &str) -> Option<&RelationDef> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn key_index(&self) -> usize {
        self.property_index(&self.key)
            .expect("validated model has a key property")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("cannot read model file {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("invalid model JSON: {0}")]
    Json(String),
    #[error("duplicate entity set `{0}`")]
    DuplicateSet(String),
    #[error("entity set `{set}` declares `{name}` more than once")]
    DuplicateMember { set: String, name: String },
    #[error("entity set `{set}` has no numeric key property `{key}`")]
    BadKey { set: String, key: String },
    #[error("relation `{set}.{relation}` targets unknown entity set `{target}`")]
    UnknownTarget {
        set: String,
        relation: String,
        target: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldErrorKind {
    UnknownField,
    NotNavigable,
}

/// A field path that did not resolve. `segment` is the index of the failing segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub kind: FieldErrorKind,
    pub segment: usize,
    pub name: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ModelFile {
    entity_sets: Vec<EntitySetDef>,
}

/// Validated entity model. Set lookup by name is exact; member lookup is
/// case-insensitive and always yields metadata casing.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityModel {
    sets: BTreeMap<String, EntitySetDef>,
    order: Vec<String>,
}

impl EntityModel {
    pub fn new(sets: Vec<EntitySetDef>) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        let mut order = Vec::new();
        for set in sets {
            let mut seen = HashSet::new();
            for name in set
                .properties
                .iter()
                .map(|p| &p.name)
                .chain(set.relations.iter().map(|r| &r.name))
            {
                if !seen.insert(name.to_ascii_lowercase()) {
                    return Err(ModelError::DuplicateMember {
                        set: set.name.clone(),
                        name: name.clone(),
                    });
                }
            }
            match set.properties.iter().find(|p| p.name == set.key) {
                Some(p) if p.ty == PropertyType::Number => {}
                _ => {
                    return Err(ModelError::BadKey {
                        set: set.name.clone(),
                        key: set.key.clone(),
                    })
                }
            }
            if map.contains_key(&set.name) {
                return Err(ModelError::DuplicateSet(set.name));
            }
            order.push(set.name.clone());
            map.insert(set.name.clone(), set);
        }
        for set in map.values() {
            for rel in &set.relations {
                if !map.contains_key(&rel.target) {
                    return Err(ModelError::UnknownTarget {
                        set: set.name.clone(),
                        relation: rel.name.clone(),
                        target: rel.target.clone(),
                    });
                }
            }
        }
        Ok(Self { sets: map, order })
    }

    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(s).map_err(|e| ModelError::Json(e.to_string()))?;
        Self::new(file.entity_sets)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let file = ModelFile {
            entity_sets: self.entity_sets().cloned().collect(),
        };
        serde_json::to_value(file).expect("model serializes")
    }

    pub fn entity_set(&self, name: &str) -> Option<&EntitySetDef> {
        self.sets.get(name)
    }

    /// Entity sets in declaration order.
    pub fn entity_sets(&self) -> impl Iterator<Item = &EntitySetDef> {
        self.order.iter().map(|n| &self.sets[n])
    }

    /// Resolves a property path (case-insensitively) starting at `set`.
    /// All segments but the last must name one-to-one relations.
    pub fn resolve_field<S: AsRef<str>>(
        &self,
        set: &str,
        segments: &[S],
    ) -> Result<(FieldRef, PropertyType), FieldError> {
        let mut current = self.entity_set(set).ok_or_else(|| FieldError {
            kind: FieldErrorKind::UnknownField,
            segment: 0,
            name: set.to_string(),
        })?;
        let mut path = Vec::with_capacity(segments.len());
        for (i, seg) in segments.iter().enumerate() {
            let seg = seg.as_ref();
            if i + 1 == segments.len() {
                let prop = current.property_ci(seg).ok_or_else(|| FieldError {
                    kind: FieldErrorKind::UnknownField,
                    segment: i,
                    name: seg.to_string(),
                })?;
                path.push(prop.name.clone());
                return Ok((FieldRef::new(path), prop.ty));
            }
            let rel = current.relation_ci(seg).ok_or_else(|| FieldError {
                kind: FieldErrorKind::UnknownField,
                segment: i,
                name: seg.to_string(),
            })?;
            if rel.cardinality != Cardinality::OneToOne {
                return Err(FieldError {
                    kind: FieldErrorKind::NotNavigable,
                    segment: i,
                    name: seg.to_string(),
                });
            }
            path.push(rel.name.clone());
            current = &self.sets[&rel.target];
        }
        Err(FieldError {
            kind: FieldErrorKind::UnknownField,
            segment: 0,
            name: String::new(),
        })
    }

    /// Type of an already-resolved field path.
    pub fn field_type(&self, set: &str, field: &FieldRef) -> Option<PropertyType> {
        self.resolve_field(set, field.segments()).ok().map(|(_, t)| t)
    }

    /// Entity sets reached by following a resolved field path's relation hops.
    pub fn path_sets(&self, set: &str, field: &FieldRef) -> Vec<String> {
        let mut out = Vec::new();
        let mut current = match self.entity_set(set) {
            Some(s) => s,
            None => return out,
        };
        let segs = field.segments();
        for seg in &segs[..segs.len().saturating_sub(1)] {
            match current.relation(seg) {
                Some(rel) => {
                    out.push(rel.target.clone());
                    current = &self.sets[&rel.target];
                }
                None => break,
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODEL: &str = r#"{
      "entitySets": [
        {"name": "Products", "properties": [
            {"name": "Id", "type": "number"}, {"name": "Name", "type": "string"},
            {"name": "Price", "type": "number"}],
         "relations": [
            {"name": "Supplier", "target": "Suppliers", "cardinality": "one-to-one"},
            {"name": "Reviews", "target": "Suppliers", "cardinality": "one-to-many"}]},
        {"name": "Suppliers", "properties": [
            {"name": "Id", "type": "number"}, {"name": "Country", "type": "string"}]}
      ]}"#;

    #[test]
    fn resolves_case_insensitively_to_metadata_casing() {
        let m = EntityModel::from_json_str(MODEL).unwrap();
        let (f, ty) = m.resolve_field("Products", &["pRiCe"]).unwrap();
        assert_eq!(f.to_string(), "Price");
        assert_eq!(ty, PropertyType::Number);
        let (f, ty) = m.resolve_field("Products", &["supplier", "country"]).unwrap();
        assert_eq!(f.to_string(), "Supplier/Country");
        assert_eq!(ty, PropertyType::String);
    }

    #[test]
    fn rejects_navigation_through_collections() {
        let m = EntityModel::from_json_str(MODEL).unwrap();
        let err = m.resolve_field("Products", &["Reviews", "Country"]).unwrap_err();
        assert_eq!(err.kind, FieldErrorKind::NotNavigable);
        let err = m.resolve_field("Products", &["Nope"]).unwrap_err();
        assert_eq!(err.kind, FieldErrorKind::UnknownField);
    }

    #[test]
    fn validates_relation_targets_and_keys() {
        let bad = r#"{"entitySets":[{"name":"A","properties":[{"name":"Id","type":"number"}],
            "relations":[{"name":"B","target":"Missing","cardinality":"one-to-one"}]}]}"#;
        assert!(matches!(
            EntityModel::from_json_str(bad),
            Err(ModelError::UnknownTarget { .. })
        ));
        let nokey = r#"{"entitySets":[{"name":"A","properties":[{"name":"Id","type":"string"}]}]}"#;
        assert!(matches!(
            EntityModel::from_json_str(nokey),
            Err(ModelError::BadKey { .. })
        ));
    }
}
