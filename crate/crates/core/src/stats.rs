//! Column and relation statistics used by the cost model.
//!
//! Statistics are exact: built by a full scan of the store. Every column gets
//! a top-K frequency table; numeric columns additionally get an equi-depth
//! histogram. Nulls are counted separately, so for each column
//! `nullCount + Σ bucket counts = rowCount` and
//! `nullCount + Σ topK counts + residualRowCount = rowCount`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ast::Literal;
use crate::model::{Cardinality, PropertyType};
use crate::store::EntityStore;

pub const DEFAULT_BUCKET_COUNT: usize = 32;
pub const DEFAULT_TOP_K: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct StatsConfig {
    pub bucket_count: usize,
    pub top_k: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            bucket_count: DEFAULT_BUCKET_COUNT,
            top_k: DEFAULT_TOP_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub buckets: Vec<Bucket>,
}

impl Histogram {
    /// Equi-depth histogram over `sorted` (ascending, no NaN).
    pub fn equi_depth(sorted: &[f64], bucket_count: usize) -> Self {
        let n = sorted.len();
        let k = bucket_count.max(1).min(n);
        let mut buckets = Vec::with_capacity(k);
        for i in 0..k {
            let (a, b) = (i * n / k, (i + 1) * n / k);
            buckets.push(Bucket {
                lo: sorted[a],
                hi: sorted[b - 1],
                count: (b - a) as u64,
            });
        }
        Self { buckets }
    }

    pub fn total(&self) -> u64 {
        self.buckets.iter().map(|b| b.count).sum()
    }

    /// Estimated number of rows satisfying `x <op> v`, with linear
    /// interpolation inside the boundary bucket.
    pub fn estimate_range(&self, op: RangeOp, v: f64) -> f64 {
        self.buckets
            .iter()
            .map(|b| b.count as f64 * bucket_fraction(b, op, v))
            .sum()
    }
}

fn bucket_fraction(b: &Bucket, op: RangeOp, v: f64) -> f64 {
    let width = b.hi - b.lo;
    match op {
        RangeOp::Gt | RangeOp::Ge => {
            let full = if op == RangeOp::Gt { b.lo > v } else { b.lo >= v };
            let none = if op == RangeOp::Gt { b.hi <= v } else { b.hi < v };
            if full {
                1.0
            } else if none {
                0.0
            } else {
                (b.hi - v) / width
            }
        }
        RangeOp::Lt | RangeOp::Le => {
            let full = if op == RangeOp::Lt { b.hi < v } else { b.hi <= v };
            let none = if op == RangeOp::Lt { b.lo >= v } else { b.lo > v };
            if full {
                1.0
            } else if none {
                0.0
            } else {
                (v - b.lo) / width
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeOp {
    Gt,
    Ge,
    Lt,
    Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequentValue {
    pub value: Value,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TopK {
    pub values: Vec<FrequentValue>,
    pub residual_row_count: u64,
    pub residual_distinct_count: u64,
}

impl TopK {
    pub fn count_of(&self, v: &Value) -> Option<u64> {
        self.values.iter().find(|f| &f.value == v).map(|f| f.count)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ColumnStats {
    pub null_count: u64,
    pub top_k: TopK,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RelationStats {
    pub target: String,
    pub cardinality_class: Cardinality,
    pub avg_cardinality: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SetStats {
    pub row_count: u64,
    #[serde(default)]
    pub columns: BTreeMap<String, ColumnStats>,
    #[serde(default)]
    pub relations: BTreeMap<String, RelationStats>,
}

/// Immutable statistics snapshot for every entity set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatisticsCatalog {
    pub entity_sets: BTreeMap<String, SetStats>,
}

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("cannot read statistics file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid statistics JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl StatisticsCatalog {
    pub fn set(&self, name: &str) -> Option<&SetStats> {
        self.entity_sets.get(name)
    }

    pub fn row_count(&self, set: &str) -> Option<u64> {
        self.set(set).map(|s| s.row_count)
    }

    pub fn relation(&self, set: &str, relation: &str) -> Option<&RelationStats> {
        self.set(set)?.relations.get(relation)
    }

    /// Column statistics for a possibly navigated path: leading segments are
    /// followed through relation targets.
    pub fn column(&self, set: &str, path: &[String]) -> Option<&ColumnStats> {
        let (last, nav) = path.split_last()?;
        let mut current = set;
        for seg in nav {
            current = &self.relation(current, seg)?.target;
        }
        self.set(current)?.columns.get(last)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("statistics serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StatsError> {
        std::fs::write(path, self.to_json_pretty())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StatsError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn build_stats(store: &EntityStore) -> StatisticsCatalog {
    build_stats_with(store, StatsConfig::default())
}

pub fn build_stats_with(store: &EntityStore, cfg: StatsConfig) -> StatisticsCatalog {
    let model = store.model();
    let mut entity_sets = BTreeMap::new();
    for def in model.entity_sets() {
        let Some(table) = store.table(&def.name) else {
            entity_sets.insert(def.name.clone(), SetStats::default());
            continue;
        };
        let rows = table.len() as u64;
        let mut columns = BTreeMap::new();
        for (i, p) in def.properties.iter().enumerate() {
            let values: Vec<&Literal> = table.iter().map(|e| &e.values[i]).collect();
            columns.insert(p.name.clone(), column_stats(&values, p.ty, cfg));
        }
        let mut relations = BTreeMap::new();
        for (i, r) in def.relations.iter().enumerate() {
            let links: usize = table.iter().map(|e| e.links[i].len()).sum();
            let avg = if rows == 0 { 0.0 } else { links as f64 / rows as f64 };
            relations.insert(
                r.name.clone(),
                RelationStats {
                    target: r.target.clone(),
                    cardinality_class: r.cardinality,
                    avg_cardinality: avg,
                },
            );
        }
        entity_sets.insert(
            def.name.clone(),
            SetStats {
                row_count: rows,
                columns,
                relations,
            },
        );
    }
    StatisticsCatalog { entity_sets }
}

fn column_stats(values: &[&Literal], ty: PropertyType, cfg: StatsConfig) -> ColumnStats {
    let null_count = values.iter().filter(|v| matches!(v, Literal::Null)).count() as u64;
    let mut freq: HashMap<&Literal, u64> = HashMap::new();
    for v in values.iter().filter(|v| !matches!(v, Literal::Null)) {
        *freq.entry(v).or_default() += 1;
    }
    let mut ranked: Vec<(&Literal, u64)> = freq.into_iter().collect();
    // Highest count first; ties broken by value so the output is deterministic.
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.sort_cmp(b.0)));
    let (head, tail) = ranked.split_at(ranked.len().min(cfg.top_k));
    let top_k = TopK {
        values: head
            .iter()
            .map(|(v, c)| FrequentValue {
                value: v.to_json(),
                count: *c,
            })
            .collect(),
        residual_row_count: tail.iter().map(|(_, c)| c).sum(),
        residual_distinct_count: tail.len() as u64,
    };
    let histogram = (ty == PropertyType::Number).then(|| {
        let mut nums: Vec<f64> = values.iter().filter_map(|v| v.as_f64()).collect();
        nums.sort_by(f64::total_cmp);
        Histogram::equi_depth(&nums, cfg.bucket_count)
    });
    ColumnStats {
        null_count,
        top_k,
        histogram,
    }
}
