//! In-memory entity store.
//!
//! Entities are flat records keyed by a stable integer id. Relations are id
//! lists stored on the source record, in the same shape as the JSON data
//! files:
//!
//! ```json
//! [{ "Id": 1, "Name": "Lamp", "Price": 12.5, "Reviews": [3, 9], "Supplier": [2] }]
//! ```
//!
//! Tables are shared through `Arc`; a mutation produces a new store that
//! shares every untouched table with the old one.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::ast::{Literal, Number};
use crate::model::{Cardinality, EntityModel, EntitySetDef, ModelError, PropertyType};

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot read data file {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("invalid JSON in {path}: {reason}")]
    Json { path: String, reason: String },
    #[error("unknown entity set `{0}`")]
    UnknownEntitySet(String),
    #[error("schema mismatch in `{set}`: {message}")]
    SchemaMismatch { set: String, message: String },
    #[error("duplicate id {id} in `{set}`")]
    DuplicateId { set: String, id: i64 },
    #[error("`{set}` {id} relation `{relation}` references missing `{target}` {target_id}")]
    DanglingReference {
        set: String,
        id: i64,
        relation: String,
        target: String,
        target_id: i64,
    },
    #[error("`{set}` has no entity with id {id}")]
    NotFound { set: String, id: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: i64,
    /// Values in model property order.
    pub values: Vec<Literal>,
    /// Related ids in model relation order.
    pub links: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, Default)]
pub struct EntityTable {
    entities: Vec<Arc<Entity>>,
    index: HashMap<i64, usize>,
}

impl EntityTable {
    fn from_entities(set: &str, entities: Vec<Arc<Entity>>) -> Result<Self, StoreError> {
        let mut index = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            if index.insert(e.id, i).is_some() {
                return Err(StoreError::DuplicateId {
                    set: set.to_string(),
                    id: e.id,
                });
            }
        }
        Ok(Self { entities, index })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().map(|e| e.as_ref())
    }

    pub fn get(&self, id: i64) -> Option<&Entity> {
        self.index.get(&id).map(|&i| self.entities[i].as_ref())
    }

    pub fn contains(&self, id: i64) -> bool {
        self.index.contains_key(&id)
    }
}

#[derive(Debug, Clone)]
pub struct EntityStore {
    model: Arc<EntityModel>,
    tables: BTreeMap<String, Arc<EntityTable>>,
}

fn literal_from_json(set: &str, prop: &str, ty: PropertyType, v: &Value) -> Result<Literal, StoreError> {
    let mismatch = || StoreError::SchemaMismatch {
        set: set.to_string(),
        message: format!("property `{prop}` expects {ty}, got `{v}`"),
    };
    Ok(match (ty, v) {
        (_, Value::Null) => Literal::Null,
        (PropertyType::Number, Value::Number(n)) => {
            Literal::Number(n.as_f64().and_then(Number::new).ok_or_else(mismatch)?)
        }
        (PropertyType::String, Value::String(s)) => Literal::String(s.clone()),
        (PropertyType::Boolean, Value::Bool(b)) => Literal::Bool(*b),
        _ => return Err(mismatch()),
    })
}

fn ids_from_json(set: &str, rel: &str, v: &Value) -> Result<Vec<i64>, StoreError> {
    let bad = || StoreError::SchemaMismatch {
        set: set.to_string(),
        message: format!("relation `{rel}` expects an array of integer ids, got `{v}`"),
    };
    match v {
        Value::Null => Ok(Vec::new()),
        Value::Number(n) => n.as_i64().map(|i| vec![i]).ok_or_else(bad),
        Value::Array(items) => items.iter().map(|i| i.as_i64().ok_or_else(bad)).collect(),
        _ => Err(bad()),
    }
}

/// Converts one JSON record into an entity. Missing properties become null.
pub fn entity_from_json(def: &EntitySetDef, record: &Value) -> Result<Entity, StoreError> {
    let obj = record.as_object().ok_or_else(|| StoreError::SchemaMismatch {
        set: def.name.clone(),
        message: format!("record must be an object, got `{record}`"),
    })?;
    for key in obj.keys() {
        if def.property_index(key).is_none() && def.relation_index(key).is_none() {
            return Err(StoreError::SchemaMismatch {
                set: def.name.clone(),
                message: format!("unknown member `{key}`"),
            });
        }
    }
    let mut values = Vec::with_capacity(def.properties.len());
    for p in &def.properties {
        values.push(match obj.get(&p.name) {
            Some(v) => literal_from_json(&def.name, &p.name, p.ty, v)?,
            None => Literal::Null,
        });
    }
    let id = match &values[def.key_index()] {
        Literal::Number(n) => n.as_i64().ok_or_else(|| StoreError::SchemaMismatch {
            set: def.name.clone(),
            message: format!("key `{}` must be an integer", def.key),
        })?,
        _ => {
            return Err(StoreError::SchemaMismatch {
                set: def.name.clone(),
                message: format!("missing key `{}`", def.key),
            })
        }
    };
    let mut links = Vec::with_capacity(def.relations.len());
    for r in &def.relations {
        let ids = match obj.get(&r.name) {
            Some(v) => ids_from_json(&def.name, &r.name, v)?,
            None => Vec::new(),
        };
        if r.cardinality == Cardinality::OneToOne && ids.len() > 1 {
            return Err(StoreError::SchemaMismatch {
                set: def.name.clone(),
                message: format!("one-to-one relation `{}` of {id} has {} targets", r.name, ids.len()),
            });
        }
        links.push(ids);
    }
    Ok(Entity { id, values, links })
}

pub fn entity_to_json(def: &EntitySetDef, e: &Entity) -> Value {
    let mut obj = Map::new();
    for (p, v) in def.properties.iter().zip(&e.values) {
        obj.insert(p.name.clone(), v.to_json());
    }
    for (r, ids) in def.relations.iter().zip(&e.links) {
        if !ids.is_empty() {
            obj.insert(r.name.clone(), Value::from(ids.clone()));
        }
    }
    Value::Object(obj)
}

impl EntityStore {
    pub fn empty(model: Arc<EntityModel>) -> Self {
        let tables = model
            .entity_sets()
            .map(|s| (s.name.clone(), Arc::new(EntityTable::default())))
            .collect();
        Self { model, tables }
    }

    /// Builds and validates a store from JSON records per entity set. Sets
    /// without records are empty.
    pub fn from_records(
        model: Arc<EntityModel>,
        records: BTreeMap<String, Vec<Value>>,
    ) -> Result<Self, StoreError> {
        let mut store = Self::empty(model.clone());
        for (set, rows) in records {
            let def = model
                .entity_set(&set)
                .ok_or_else(|| StoreError::UnknownEntitySet(set.clone()))?;
            let entities = rows
                .iter()
                .map(|r| entity_from_json(def, r).map(Arc::new))
                .collect::<Result<Vec<_>, _>>()?;
            store
                .tables
                .insert(set.clone(), Arc::new(EntityTable::from_entities(&set, entities)?));
        }
        store.validate_references()?;
        Ok(store)
    }

    fn validate_references(&self) -> Result<(), StoreError> {
        for def in self.model.entity_sets() {
            let table = &self.tables[&def.name];
            for e in table.iter() {
                for (r, ids) in def.relations.iter().zip(&e.links) {
                    let target = &self.tables[&r.target];
                    if let Some(&missing) = ids.iter().find(|id| !target.contains(**id)) {
                        return Err(StoreError::DanglingReference {
                            set: def.name.clone(),
                            id: e.id,
                            relation: r.name.clone(),
                            target: r.target.clone(),
                            target_id: missing,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn model(&self) -> &Arc<EntityModel> {
        &self.model
    }

    pub fn table(&self, set: &str) -> Option<&EntityTable> {
        self.tables.get(set).map(|t| t.as_ref())
    }

    pub fn row_count(&self, set: &str) -> usize {
        self.table(set).map_or(0, |t| t.len())
    }

    /// Records of one set in insertion order, relations as id arrays.
    pub fn records(&self, set: &str) -> Option<Vec<Value>> {
        let def = self.model.entity_set(set)?;
        Some(self.table(set)?.iter().map(|e| entity_to_json(def, e)).collect())
    }

    fn def(&self, set: &str) -> Result<&EntitySetDef, StoreError> {
        self.model
            .entity_set(set)
            .ok_or_else(|| StoreError::UnknownEntitySet(set.to_string()))
    }

    fn with_table(&self, set: &str, table: EntityTable) -> Self {
        let mut tables = self.tables.clone();
        tables.insert(set.to_string(), Arc::new(table));
        Self {
            model: self.model.clone(),
            tables,
        }
    }

    fn check_links(&self, def: &EntitySetDef, e: &Entity) -> Result<(), StoreError> {
        for (r, ids) in def.relations.iter().zip(&e.links) {
            let target = &self.tables[&r.target];
            if let Some(&missing) = ids.iter().find(|id| !target.contains(**id)) {
                return Err(StoreError::DanglingReference {
                    set: def.name.clone(),
                    id: e.id,
                    relation: r.name.clone(),
                    target: r.target.clone(),
                    target_id: missing,
                });
            }
        }
        Ok(())
    }

    /// Inserts a record; a missing key is assigned `max(id) + 1`.
    pub fn insert(&self, set: &str, record: &Value) -> Result<(Self, Entity), StoreError> {
        let def = self.def(set)?;
        let table = &self.tables[set];
        let mut record = record.clone();
        if let Value::Object(obj) = &mut record {
            if obj.get(&def.key).is_none_or(Value::is_null) {
                let next = table.iter().map(|e| e.id).max().unwrap_or(0) + 1;
                obj.insert(def.key.clone(), Value::from(next));
            }
        }
        let entity = entity_from_json(def, &record)?;
        if table.contains(entity.id) {
            return Err(StoreError::DuplicateId {
                set: set.to_string(),
                id: entity.id,
            });
        }
        self.check_links(def, &entity)?;
        let mut entities = table.entities.clone();
        entities.push(Arc::new(entity.clone()));
        let table = EntityTable::from_entities(set, entities)?;
        Ok((self.with_table(set, table), entity))
    }

    /// Replaces (`merge == false`) or patches (`merge == true`) an entity.
    pub fn update(&self, set: &str, id: i64, record: &Value, merge: bool) -> Result<(Self, Entity), StoreError> {
        let def = self.def(set)?;
        let table = &self.tables[set];
        let pos = *table.index.get(&id).ok_or(StoreError::NotFound {
            set: set.to_string(),
            id,
        })?;
        let mut merged = if merge {
            entity_to_json(def, &table.entities[pos])
        } else {
            Value::Object(Map::new())
        };
        let patch = record.as_object().ok_or_else(|| StoreError::SchemaMismatch {
            set: set.to_string(),
            message: "body must be a JSON object".into(),
        })?;
        let obj = merged.as_object_mut().unwrap();
        for (k, v) in patch {
            obj.insert(k.clone(), v.clone());
        }
        obj.insert(def.key.clone(), Value::from(id));
        let entity = entity_from_json(def, &merged)?;
        self.check_links(def, &entity)?;
        let mut entities = table.entities.clone();
        entities[pos] = Arc::new(entity.clone());
        let table = EntityTable::from_entities(set, entities)?;
        Ok((self.with_table(set, table), entity))
    }

    /// Deletes an entity and removes every link pointing at it.
    pub fn delete(&self, set: &str, id: i64) -> Result<Self, StoreError> {
        self.def(set)?;
        let table = &self.tables[set];
        if !table.contains(id) {
            return Err(StoreError::NotFound {
                set: set.to_string(),
                id,
            });
        }
        let entities: Vec<_> = table.entities.iter().filter(|e| e.id != id).cloned().collect();
        let mut next = self.with_table(set, EntityTable::from_entities(set, entities)?);
        for def in self.model.entity_sets() {
            let referencing: Vec<usize> = def
                .relations
                .iter()
                .enumerate()
                .filter(|(_, r)| r.target == set)
                .map(|(i, _)| i)
                .collect();
            if referencing.is_empty() {
                continue;
            }
            let source = &next.tables[&def.name];
            let touched = source
                .iter()
                .any(|e| referencing.iter().any(|&r| e.links[r].contains(&id)));
            if !touched {
                continue;
            }
            let entities = source
                .entities
                .iter()
                .map(|e| {
                    if referencing.iter().any(|&r| e.links[r].contains(&id)) {
                        let mut e = (**e).clone();
                        for &r in &referencing {
                            e.links[r].retain(|x| *x != id);
                        }
                        Arc::new(e)
                    } else {
                        e.clone()
                    }
                })
                .collect();
            let table = EntityTable::from_entities(&def.name, entities)?;
            next = next.with_table(&def.name, table);
        }
        Ok(next)
    }
}

fn read_json(path: &Path) -> Result<Value, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| StoreError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| StoreError::Json {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Loads a store from a model file and one data file per entity set. The
/// file stem names the set (`Products.json` holds `Products`).
pub fn load_dataset(model_file: impl AsRef<Path>, data_files: &[PathBuf]) -> Result<EntityStore, StoreError> {
    let model = Arc::new(EntityModel::load(model_file)?);
    let mut records = BTreeMap::new();
    for path in data_files {
        let set = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let rows = match read_json(path)? {
            Value::Array(rows) => rows,
            other => {
                return Err(StoreError::Json {
                    path: path.display().to_string(),
                    reason: format!("expected a JSON array, got {}", json_kind(&other)),
                })
            }
        };
        records.insert(set, rows);
    }
    EntityStore::from_records(model, records)
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}
