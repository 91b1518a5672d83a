//! Pre-execution cost estimation.
//!
//! `total = wFilter·filterCost + wExpand·expandCost + wSize·(projectedRows / rowsPerCostUnit)`

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ast::{expand_depth, CompareOp, ExpandNode, FilterExpr, Literal, Query};
use crate::stats::{RangeOp, StatisticsCatalog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", default)]
pub struct CostWeights {
    pub w_filter: f64,
    pub w_expand: f64,
    pub w_size: f64,
    pub rows_per_cost_unit: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_filter: 1.0,
            w_expand: 1.0,
            w_size: 1.0,
            rows_per_cost_unit: 1000.0,
        }
    }
}

/// Selectivities used when no statistics cover a condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", default)]
pub struct DefaultSelectivity {
    pub eq: f64,
    pub range: f64,
    pub ne: f64,
    pub string_function: f64,
}

impl Default for DefaultSelectivity {
    fn default() -> Self {
        Self {
            eq: 0.1,
            range: 0.33,
            ne: 0.9,
            string_function: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", default)]
pub struct CostConfig {
    pub weights: CostWeights,
    pub threshold: f64,
    pub comparison_leaf_cost: f64,
    pub string_function_leaf_cost: f64,
    pub depth_base: f64,
    pub default_cardinality: f64,
    pub default_selectivity: DefaultSelectivity,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            weights: CostWeights::default(),
            threshold: 500.0,
            comparison_leaf_cost: 1.0,
            string_function_leaf_cost: 5.0,
            depth_base: 2.0,
            default_cardinality: 10.0,
            default_selectivity: DefaultSelectivity::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CostEstimate {
    pub filter_cost: f64,
    pub expand_cost: f64,
    pub projected_rows: u64,
    pub size_cost: f64,
    pub total: f64,
    pub threshold: f64,
    pub suggestions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostDecision {
    Accept,
    Reject(RejectPayload),
}

/// `QueryTooExpensive` response body.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectPayload(pub serde_json::Value);

impl RejectPayload {
    pub const HTTP_STATUS: u16 = 400;

    pub fn to_json_string(&self) -> String {
        self.0.to_string()
    }
}

pub fn filter_cost(f: Option<&FilterExpr>, cfg: &CostConfig) -> f64 {
    fn walk(f: &FilterExpr, depth: i32, cfg: &CostConfig) -> f64 {
        match f {
            FilterExpr::Comparison { .. } => cfg.comparison_leaf_cost * cfg.depth_base.powi(depth),
            FilterExpr::StringFn { .. } => cfg.string_function_leaf_cost * cfg.depth_base.powi(depth),
            FilterExpr::And(cs) | FilterExpr::Or(cs) => {
                1.0 + cs.iter().map(|c| walk(c, depth, cfg)).sum::<f64>()
            }
            FilterExpr::Not(inner) => 1.0 + walk(inner, depth, cfg),
            FilterExpr::Group(inner) => walk(inner, depth + 1, cfg),
        }
    }
    f.map_or(0.0, |f| walk(f, 0, cfg))
}

/// Sum over every expand node of the product of `max(avgCardinality, 1)`
/// along its path from the root set.
pub fn expand_cost(expand: &[ExpandNode], set: &str, stats: &StatisticsCatalog, cfg: &CostConfig) -> f64 {
    fn walk(nodes: &[ExpandNode], set: Option<&str>, prefix: f64, stats: &StatisticsCatalog, cfg: &CostConfig) -> f64 {
        let mut sum = 0.0;
        for n in nodes {
            let rel = set.and_then(|s| stats.relation(s, &n.relation));
            let card = rel.map_or(cfg.default_cardinality, |r| r.avg_cardinality).max(1.0);
            let here = prefix * card;
            sum += here + walk(&n.children, rel.map(|r| r.target.as_str()), here, stats, cfg);
        }
        sum
    }
    walk(expand, Some(set), 1.0, stats, cfg)
}

fn range_op(op: CompareOp) -> Option<RangeOp> {
    match op {
        CompareOp::Gt => Some(RangeOp::Gt),
        CompareOp::Ge => Some(RangeOp::Ge),
        CompareOp::Lt => Some(RangeOp::Lt),
        CompareOp::Le => Some(RangeOp::Le),
        CompareOp::Eq | CompareOp::Ne => None,
    }
}

/// Estimated fraction of rows of `set` matching one leaf condition.
pub fn selectivity(cond: &FilterExpr, stats: &StatisticsCatalog, set: &str, cfg: &CostConfig) -> f64 {
    let d = &cfg.default_selectivity;
    let (field, op, value) = match cond {
        FilterExpr::StringFn { .. } => return d.string_function,
        FilterExpr::Comparison { field, op, value } => (field, *op, value),
        // Only leaves have a selectivity of their own.
        other => return combined_selectivity(other, stats, set, cfg),
    };
    let rows = owning_row_count(stats, set, field.segments());
    let Some((col, rows)) = stats.column(set, field.segments()).zip(rows) else {
        return match op {
            CompareOp::Eq => d.eq,
            CompareOp::Ne => d.ne,
            _ => d.range,
        };
    };
    if rows == 0 {
        return 0.0;
    }
    let rows_f = rows as f64;
    let eq = || match value {
        Literal::Null => col.null_count as f64 / rows_f,
        v => match col.top_k.count_of(&v.to_json()) {
            Some(c) => c as f64 / rows_f,
            None => {
                col.top_k.residual_row_count as f64
                    / (rows_f * col.top_k.residual_distinct_count.max(1) as f64)
            }
        },
    };
    let s = match op {
        CompareOp::Eq => eq(),
        CompareOp::Ne => 1.0 - eq(),
        _ => match (col.histogram.as_ref(), value) {
            // Range comparisons against null never match.
            (_, Literal::Null) => 0.0,
            (Some(h), Literal::Number(n)) => h.estimate_range(range_op(op).unwrap(), n.value()) / rows_f,
            _ => d.range,
        },
    };
    s.clamp(0.0, 1.0)
}

fn owning_row_count(stats: &StatisticsCatalog, set: &str, path: &[String]) -> Option<u64> {
    let mut current = set;
    for seg in &path[..path.len().saturating_sub(1)] {
        current = &stats.relation(current, seg)?.target;
    }
    stats.row_count(current)
}

fn combined_selectivity(f: &FilterExpr, stats: &StatisticsCatalog, set: &str, cfg: &CostConfig) -> f64 {
    match f {
        FilterExpr::Comparison { .. } | FilterExpr::StringFn { .. } => selectivity(f, stats, set, cfg),
        FilterExpr::And(cs) => cs
            .iter()
            .map(|c| combined_selectivity(c, stats, set, cfg))
            .product(),
        FilterExpr::Or(cs) => cs.iter().fold(0.0, |acc, c| {
            let s = combined_selectivity(c, stats, set, cfg);
            acc + s - acc * s
        }),
        FilterExpr::Not(inner) => 1.0 - combined_selectivity(inner, stats, set, cfg),
        FilterExpr::Group(inner) => combined_selectivity(inner, stats, set, cfg),
    }
}

pub fn projected_rows(q: &Query, stats: &StatisticsCatalog, cfg: &CostConfig) -> u64 {
    let base = stats.row_count(&q.entity_set).unwrap_or(0);
    let s = q
        .filter
        .as_ref()
        .map_or(1.0, |f| combined_selectivity(f, stats, &q.entity_set, cfg));
    let mut rows = (base as f64 * s).round() as u64;
    if s > 0.0 {
        rows = rows.max(1);
    }
    rows = rows.min(base);
    match q.top {
        Some(top) => rows.min(top),
        None => rows,
    }
}

pub fn estimate(q: &Query, stats: &StatisticsCatalog, cfg: &CostConfig) -> CostEstimate {
    let filter_cost = filter_cost(q.filter.as_ref(), cfg);
    let expand_cost = expand_cost(&q.expand, &q.entity_set, stats, cfg);
    let projected_rows = projected_rows(q, stats, cfg);
    assemble(filter_cost, expand_cost, projected_rows, expand_depth(&q.expand), cfg)
}

/// Builds an estimate from already computed components.
pub fn assemble(filter_cost: f64, expand_cost: f64, projected_rows: u64, max_expand_depth: usize, cfg: &CostConfig) -> CostEstimate {
    let w = &cfg.weights;
    let size_cost = projected_rows as f64 / w.rows_per_cost_unit;
    let total = w.w_filter * filter_cost + w.w_expand * expand_cost + w.w_size * size_cost;
    let mut suggestions = Vec::new();
    if expand_cost > 0.5 * total && max_expand_depth > 0 {
        suggestions.push(format!(
            "Reduce expand depth from {} to {} levels",
            max_expand_depth,
            max_expand_depth - 1
        ));
    }
    if projected_rows as f64 > w.rows_per_cost_unit * 100.0 {
        suggestions.push("Add more selective filter conditions".to_string());
    }
    CostEstimate {
        filter_cost,
        expand_cost,
        projected_rows,
        size_cost,
        total,
        threshold: cfg.threshold,
        suggestions,
    }
}

fn int(v: f64) -> i64 {
    v.round() as i64
}

pub fn check(est: &CostEstimate) -> CostDecision {
    if est.total <= est.threshold {
        return CostDecision::Accept;
    }
    CostDecision::Reject(RejectPayload(json!({
        "error": {
            "code": "QueryTooExpensive",
            "message": format!(
                "Query cost ({}) exceeds maximum allowed ({})",
                int(est.total),
                int(est.threshold)
            ),
            "details": {
                "filterCost": int(est.filter_cost),
                "expandCost": int(est.expand_cost),
                "projectedRows": est.projected_rows,
                "suggestions": est.suggestions,
            }
        }
    })))
}

/// Option string of the worked rejection example, over the e-commerce model.
pub const WORKED_EXAMPLE_QUERY: &str = "$filter=Id gt 0 and ((Total ge 0 and (((contains(Status,'e') and CustomerId ge 1)))))&$expand=Product($expand=Reviews($expand=Author))";

/// Hand-built statistics for [`WORKED_EXAMPLE_QUERY`]: 600000 orders, one
/// product per order, 249.5 reviews per product and one author per review.
/// Every comparison in the filter matches all rows.
pub fn worked_example_stats() -> StatisticsCatalog {
    use crate::model::Cardinality;
    use crate::stats::{Bucket, ColumnStats, Histogram, RelationStats, SetStats, TopK};

    let orders = 600_000u64;
    let numeric = |lo: f64, hi: f64| ColumnStats {
        null_count: 0,
        top_k: TopK {
            values: Vec::new(),
            residual_row_count: orders,
            residual_distinct_count: orders,
        },
        histogram: Some(Histogram {
            buckets: vec![Bucket { lo, hi, count: orders }],
        }),
    };
    let relation = |target: &str, class: Cardinality, avg: f64| RelationStats {
        target: target.to_string(),
        cardinality_class: class,
        avg_cardinality: avg,
    };
    let set = |row_count: u64, columns: Vec<(&str, ColumnStats)>, relations: Vec<(&str, RelationStats)>| SetStats {
        row_count,
        columns: columns.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        relations: relations.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    };
    let mut cat = StatisticsCatalog::default();
    cat.entity_sets.insert(
        "Orders".into(),
        set(
            orders,
            vec![
                ("Id", numeric(1.0, orders as f64)),
                ("Total", numeric(5.0, 500.0)),
                ("CustomerId", numeric(1.0, 120_000.0)),
            ],
            vec![("Product", relation("Products", Cardinality::OneToOne, 1.0))],
        ),
    );
    cat.entity_sets.insert(
        "Products".into(),
        set(20_000, vec![], vec![("Reviews", relation("Reviews", Cardinality::OneToMany, 249.5))]),
    );
    cat.entity_sets.insert(
        "Reviews".into(),
        set(4_990_000, vec![], vec![("Author", relation("Users", Cardinality::OneToOne, 1.0))]),
    );
    cat
}
