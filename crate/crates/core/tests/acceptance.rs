//! Acceptance criteria 1-11, one pass/fail line each.

use std::collections::{BTreeMap, HashSet};
use std::future::Future;
use std::path::Path;
use std::pin::Pin;
use std::sync::Arc;
use std::time::Instant;

use odatax::ast::{CompareOp, ExpandNode, FieldRef, FilterExpr, Literal, OrderKey, Query, StringFunction};
use odatax::bench::{self, default_config, Workload};
use odatax::cache::ManualClock;
use odatax::conformance::{conformance_gateway, load_corpus, run_cases};
use odatax::cost::{self, CostConfig, CostDecision};
use odatax::datagen::{self, CATEGORIES, COUNTRIES, QUOTED_CATEGORY};
use odatax::evaluator::{count_matches, evaluate, results_to_json};
use odatax::gateway::{Features, Gateway, WriteMethod};
use odatax::model::EntityModel;
use odatax::named::{example_definitions, filter_string_literals, NamedQueryError, NamedQueryRegistry};
use odatax::parser::{parse_mixed, parse_query_params};
use odatax::parser::traditional::split_options;
use odatax::stats::{build_stats, StatisticsCatalog};
use odatax::store::EntityStore;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

type Outcome = Result<String, String>;

fn model() -> EntityModel {
    datagen::ecommerce_model()
}

fn store() -> EntityStore {
    datagen::ecommerce_small(datagen::DEFAULT_SEED).into_store().unwrap()
}

fn f(path: &str) -> FieldRef {
    FieldRef::new(path.split('/').map(str::to_string).collect())
}

fn num(v: f64) -> Literal {
    Literal::number(v)
}

fn parse(raw: &str, set: &str) -> Query {
    parse_mixed(raw, &model(), set).unwrap_or_else(|e| panic!("{raw}: {e}")).query
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1

fn translation_exactness() -> Outcome {
    let pairs = [
        ("filter=price<20,category:Books", "$filter=Price lt 20 and Category eq 'Books'"),
        (
            "filter=price>100, category:Books&sort=-price",
            "$filter=Price gt 100 and Category eq 'Books'&$orderby=Price desc",
        ),
    ];
    for (simplified, traditional) in pairs {
        let got = parse(simplified, "Products").serialize_odata();
        check(got == traditional, || format!("{simplified} -> {got}"))?;
    }
    Ok("2/2 byte-identical".into())
}

// 2

const PRODUCT_FIELDS: [&str; 7] = ["Id", "Name", "Category", "Price", "Rating", "InStock", "SupplierId"];

fn random_case(name: &str, rng: &mut StdRng) -> String {
    match rng.random_range(0..3) {
        0 => name.to_lowercase(),
        1 => name.to_uppercase(),
        _ => name.to_string(),
    }
}

/// One simplified condition and the comparison it stands for, built
/// separately.
fn random_condition(rng: &mut StdRng, names: &[String]) -> (String, FilterExpr) {
    const OPS: [(&str, CompareOp); 6] = [
        (">", CompareOp::Gt),
        ("<", CompareOp::Lt),
        (">=", CompareOp::Ge),
        ("<=", CompareOp::Le),
        ("=", CompareOp::Eq),
        ("!=", CompareOp::Ne),
    ];
    let (sym, op) = OPS[rng.random_range(0..OPS.len())];
    match rng.random_range(0..9) {
        0 => {
            let v = rng.random_range(0..200_000) as f64 / 100.0;
            (format!("{}{sym}{v}", random_case("price", rng)), FilterExpr::cmp(f("Price"), op, num(v)))
        }
        1 => {
            let v = rng.random_range(10..=50) as f64 / 10.0;
            (format!("{}{sym}{v}", random_case("rating", rng)), FilterExpr::cmp(f("Rating"), op, num(v)))
        }
        2 => {
            let v = rng.random_range(1..=60);
            (
                format!("{} {sym} {v}", random_case("supplierid", rng)),
                FilterExpr::cmp(f("SupplierId"), op, num(v as f64)),
            )
        }
        3 => {
            let v = rng.random_range(1..=10_000);
            (format!("{}{sym}{v}", random_case("id", rng)), FilterExpr::cmp(f("Id"), op, num(v as f64)))
        }
        4 => {
            let c = if rng.random_bool(0.1) { QUOTED_CATEGORY } else { CATEGORIES[rng.random_range(0..CATEGORIES.len())] };
            let value = Literal::string(c);
            match rng.random_range(0..3) {
                0 => (format!("{}:{c}", random_case("category", rng)), FilterExpr::cmp(f("Category"), CompareOp::Eq, value)),
                1 => (format!("category!=\"{c}\""), FilterExpr::cmp(f("Category"), CompareOp::Ne, value)),
                _ => (format!("Category='{}'", c.replace('\'', "''")), FilterExpr::cmp(f("Category"), CompareOp::Eq, value)),
            }
        }
        5 => {
            let b = rng.random_bool(0.5);
            let op = if rng.random_bool(0.5) { CompareOp::Eq } else { CompareOp::Ne };
            let sym = if op == CompareOp::Eq { "=" } else { "!=" };
            (format!("inStock{sym}{b}"), FilterExpr::cmp(f("InStock"), op, Literal::Bool(b)))
        }
        6 => {
            let c = COUNTRIES[rng.random_range(0..COUNTRIES.len())];
            (format!("{}:{c}", random_case("supplier/country", rng)), FilterExpr::cmp(f("Supplier/Country"), CompareOp::Eq, Literal::string(c)))
        }
        7 => {
            let n = &names[rng.random_range(0..names.len())];
            (format!("name:{n}"), FilterExpr::cmp(f("Name"), CompareOp::Eq, Literal::string(n.as_str())))
        }
        _ => {
            let v = rng.random_range(0..200_000) as f64 / 100.0;
            (format!("price {sym} {v}"), FilterExpr::cmp(f("Price"), op, num(v)))
        }
    }
}

fn random_simplified(rng: &mut StdRng, names: &[String]) -> (String, Query) {
    let mut parts = Vec::new();
    let mut q = Query::new("Products");
    let n = rng.random_range(1..=4);
    let (texts, conds): (Vec<_>, Vec<_>) = (0..n).map(|_| random_condition(rng, names)).unzip();
    let sep = if rng.random_bool(0.5) { "," } else { ", " };
    parts.push(format!("filter={}", texts.join(sep)));
    q.filter = Some(if conds.len() == 1 { conds.into_iter().next().unwrap() } else { FilterExpr::And(conds) });
    if rng.random_bool(0.6) {
        let mut fields = PRODUCT_FIELDS.to_vec();
        fields.shuffle(rng);
        let keys: Vec<(String, OrderKey)> = fields[..rng.random_range(1..=2)]
            .iter()
            .map(|name| {
                if rng.random_bool(0.5) {
                    (format!("-{}", name.to_lowercase()), OrderKey::desc(f(name)))
                } else {
                    (name.to_lowercase(), OrderKey::asc(f(name)))
                }
            })
            .collect();
        parts.push(format!("sort={}", keys.iter().map(|k| k.0.as_str()).collect::<Vec<_>>().join(",")));
        q.order_by = keys.into_iter().map(|k| k.1).collect();
    }
    if rng.random_bool(0.3) {
        let mut fields = PRODUCT_FIELDS.to_vec();
        fields.shuffle(rng);
        let chosen = &fields[..rng.random_range(1..=3)];
        parts.push(format!("select={}", chosen.iter().map(|s| s.to_lowercase()).collect::<Vec<_>>().join(",")));
        q.select = chosen.iter().map(|s| f(s)).collect();
    }
    if rng.random_bool(0.4) {
        let top = rng.random_range(1..=50);
        parts.push(format!("top={top}"));
        q.top = Some(top);
    }
    if rng.random_bool(0.2) {
        let skip = rng.random_range(1..=20);
        parts.push(format!("skip={skip}"));
        q.skip = Some(skip);
    }
    parts.shuffle(rng);
    (parts.join("&"), q)
}

fn multiset(v: &Value) -> Vec<String> {
    let mut rows: Vec<String> = v["value"].as_array().unwrap().iter().map(Value::to_string).collect();
    rows.sort();
    rows
}

fn semantic_equivalence(store: &EntityStore) -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    let names: Vec<String> = store
        .records("Products")
        .unwrap()
        .iter()
        .take(500)
        .map(|r| r["Name"].as_str().unwrap().to_string())
        .collect();
    let mut nonempty = 0;
    for i in 0..1000 {
        let (raw, expected) = random_simplified(&mut rng, &names);
        let translated = parse_mixed(&raw, &model(), "Products").map_err(|e| format!("case {i} `{raw}`: {e}"))?.query;
        let got = results_to_json(&evaluate(&translated, store).map_err(|e| e.to_string())?);
        let want = results_to_json(&evaluate(&expected, store).map_err(|e| e.to_string())?);
        let (got, want) = (multiset(&got), multiset(&want));
        check(got == want, || {
            format!("case {i} `{raw}`: {} rows vs {} rows ({})", got.len(), want.len(), translated.serialize_odata())
        })?;
        nonempty += usize::from(!got.is_empty());
    }
    Ok(format!("1000/1000 multiset-identical, {nonempty} with rows"))
}

// 3

fn compression() -> Outcome {
    let sample = bench::compression_sample(&model()).map_err(|e| e.to_string())?;
    let reduction = 1.0 - bench::mean_compression_ratio(&sample);
    let lens: Vec<(usize, usize)> = sample[..2].iter().map(|s| (s.simplified_len, s.traditional_len)).collect();
    check(lens == [(30, 43), (44, 64)], || format!("catalogue query lengths {lens:?}"))?;
    let in_band = lens
        .iter()
        .all(|&(s, t)| (30..=40).contains(&s) && (80..=90).contains(&t));
    let detail = format!(
        "catalogue queries simplified/traditional = {}/{} and {}/{} chars, mean reduction {:.3} over {} queries",
        lens[0].0,
        lens[0].1,
        lens[1].0,
        lens[1].1,
        reduction,
        sample.len()
    );
    if in_band {
        Ok(detail)
    } else {
        Err(format!("{detail}; expected 30-40 simplified vs 80-90 traditional"))
    }
}

// 4

fn worked_example() -> Outcome {
    let stats = cost::worked_example_stats();
    let q = parse(cost::WORKED_EXAMPLE_QUERY, "Orders");
    let cfg = CostConfig::default();
    let est = cost::estimate(&q, &stats, &cfg);
    check(
        (est.filter_cost, est.expand_cost, est.projected_rows, est.total) == (200.0, 500.0, 150_000, 850.0),
        || format!("components {est:?}"),
    )?;
    let CostDecision::Reject(payload) = cost::check(&est) else {
        return Err("query accepted".into());
    };
    let expected = json!({
        "error": {
            "code": "QueryTooExpensive",
            "message": "Query cost (850) exceeds maximum allowed (500)",
            "details": {
                "filterCost": 200,
                "expandCost": 500,
                "projectedRows": 150000,
                "suggestions": [
                    "Reduce expand depth from 3 to 2 levels",
                    "Add more selective filter conditions"
                ]
            }
        }
    });
    check(payload.to_json_string() == expected.to_string(), || payload.to_json_string())?;
    Ok("total 850, rejection body bit-exact".into())
}

// 5

fn random_leaf(rng: &mut StdRng) -> FilterExpr {
    let op = CompareOp::ALL[rng.random_range(0..6)];
    match rng.random_range(0..6) {
        0 => FilterExpr::cmp(f("Price"), op, num(rng.random_range(0..2000) as f64)),
        1 => FilterExpr::cmp(f("Rating"), op, num(rng.random_range(10..=50) as f64 / 10.0)),
        2 => FilterExpr::cmp(f("Category"), if rng.random_bool(0.7) { CompareOp::Eq } else { CompareOp::Ne }, Literal::string(CATEGORIES[rng.random_range(0..CATEGORIES.len())])),
        3 => FilterExpr::cmp(f("InStock"), CompareOp::Eq, Literal::Bool(rng.random_bool(0.5))),
        4 => FilterExpr::cmp(f("Supplier/Country"), CompareOp::Eq, Literal::string(COUNTRIES[rng.random_range(0..COUNTRIES.len())])),
        _ => FilterExpr::StringFn {
            func: StringFunction::ALL[rng.random_range(0..3)],
            field: f("Name"),
            value: Literal::string("a"),
        },
    }
}

fn random_filter(rng: &mut StdRng, depth: u32) -> FilterExpr {
    if depth == 0 || rng.random_bool(0.35) {
        return random_leaf(rng);
    }
    let n = rng.random_range(2..=3);
    let children: Vec<_> = (0..n).map(|_| random_filter(rng, depth - 1)).collect();
    match rng.random_range(0..5) {
        0 | 1 => FilterExpr::And(children),
        2 => FilterExpr::Group(Box::new(FilterExpr::Or(children))),
        3 => FilterExpr::Not(Box::new(FilterExpr::Group(Box::new(FilterExpr::And(children))))),
        _ => FilterExpr::Group(Box::new(FilterExpr::And(children))),
    }
}

fn add_conjunct(filter: Option<&FilterExpr>, c: FilterExpr) -> FilterExpr {
    match filter {
        None => c,
        Some(FilterExpr::And(cs)) => FilterExpr::And(cs.iter().cloned().chain([c]).collect()),
        Some(other) => FilterExpr::And(vec![other.clone(), c]),
    }
}

/// Adds one relation the query does not expand yet.
fn add_expand_node(expand: &[ExpandNode], rng: &mut StdRng) -> Vec<ExpandNode> {
    let mut out = expand.to_vec();
    let mut options: Vec<Box<dyn Fn(&mut Vec<ExpandNode>)>> = Vec::new();
    for top in ["Reviews", "Supplier"] {
        if !out.iter().any(|n| n.relation == top) {
            options.push(Box::new(move |v: &mut Vec<ExpandNode>| v.push(ExpandNode::leaf(top))));
        }
    }
    for (i, n) in out.iter().enumerate() {
        if n.relation == "Reviews" {
            for child in ["Author", "Product"] {
                if !n.children.iter().any(|c| c.relation == child) {
                    options.push(Box::new(move |v: &mut Vec<ExpandNode>| v[i].children.push(ExpandNode::leaf(child))));
                }
            }
        }
    }
    let pick = rng.random_range(0..options.len());
    options[pick](&mut out);
    out
}

fn random_expand(rng: &mut StdRng) -> Vec<ExpandNode> {
    match rng.random_range(0..4) {
        0 => vec![],
        1 => vec![ExpandNode::leaf("Supplier")],
        2 => vec![ExpandNode::with_children("Reviews", vec![ExpandNode::leaf("Author")])],
        _ => vec![ExpandNode::leaf("Reviews")],
    }
}

fn cost_monotonicity(stats: &StatisticsCatalog) -> Outcome {
    let cfg = CostConfig::default();
    let mut rng = StdRng::seed_from_u64(5);
    for i in 0..500 {
        let mut q = Query::new("Products");
        if rng.random_bool(0.9) {
            q.filter = Some(random_filter(&mut rng, 3));
        }
        q.expand = random_expand(&mut rng);
        if rng.random_bool(0.3) {
            q.top = Some(rng.random_range(1..5000));
        }
        let base = cost::estimate(&q, stats, &cfg);

        let mut more = q.clone();
        more.filter = Some(add_conjunct(q.filter.as_ref(), random_leaf(&mut rng)));
        let narrowed = cost::estimate(&more, stats, &cfg);
        check(narrowed.filter_cost >= base.filter_cost, || {
            format!("case {i}: filter cost {} -> {} for {}", base.filter_cost, narrowed.filter_cost, more.serialize_odata())
        })?;
        check(narrowed.projected_rows <= base.projected_rows, || {
            format!("case {i}: rows {} -> {} for {}", base.projected_rows, narrowed.projected_rows, more.serialize_odata())
        })?;

        let mut wider = q.clone();
        wider.expand = add_expand_node(&q.expand, &mut rng);
        let expanded = cost::estimate(&wider, stats, &cfg);
        check(expanded.expand_cost >= base.expand_cost, || {
            format!("case {i}: expand cost {} -> {} for {}", base.expand_cost, expanded.expand_cost, wider.serialize_odata())
        })?;
    }
    Ok("500/500 monotone".into())
}

// 6

fn selectivity_sanity(store: &EntityStore, stats: &StatisticsCatalog) -> Outcome {
    let cfg = CostConfig::default();
    let mut rng = StdRng::seed_from_u64(6);
    // Columns whose histogram or top-k list covers every row.
    let mut columns = Vec::new();
    for set in ["Products", "Reviews", "Orders"] {
        for (name, col) in &stats.set(set).unwrap().columns {
            if col.top_k.residual_row_count == 0 || col.histogram.is_some() {
                columns.push((set, name.clone(), col.top_k.residual_row_count == 0, col.histogram.is_some()));
            }
        }
    }
    let records: BTreeMap<&str, Vec<Value>> = ["Products", "Reviews", "Orders"]
        .into_iter()
        .map(|s| (s, store.records(s).unwrap()))
        .collect();
    let (mut within, mut worst) = (0, Vec::new());
    for _ in 0..200 {
        let (set, name, full_top_k, histogram) = columns[rng.random_range(0..columns.len())].clone();
        let rows = &records[set];
        let v = &rows[rng.random_range(0..rows.len())][&name];
        let value = match v {
            Value::Number(n) => num(n.as_f64().unwrap()),
            Value::String(s) => Literal::string(s.as_str()),
            Value::Bool(b) => Literal::Bool(*b),
            _ => Literal::Null,
        };
        let numeric = matches!(value, Literal::Number(_));
        let ops: Vec<CompareOp> = CompareOp::ALL
            .into_iter()
            .filter(|op| if op.is_range() { histogram && numeric } else { full_top_k })
            .collect();
        let op = ops[rng.random_range(0..ops.len())];
        let q = Query::new(set).with_filter(FilterExpr::cmp(f(&name), op, value));
        let truth = count_matches(&q, store).map_err(|e| e.to_string())? as f64;
        let est = cost::projected_rows(&q, stats, &cfg) as f64;
        if est <= 2.0 * truth && truth <= 2.0 * est {
            within += 1;
        } else {
            worst.push(format!("{set}?{} est {est} true {truth}", q.serialize_odata()));
        }
    }
    let detail = format!("{within}/200 within a factor of 2");
    if within >= 190 {
        Ok(detail)
    } else {
        Err(format!("{detail}: {}", worst.join("; ")))
    }
}

// 7

fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

fn shuffle_nested(e: &FilterExpr, rng: &mut StdRng) -> FilterExpr {
    match e {
        FilterExpr::And(cs) => {
            let mut cs: Vec<_> = cs.iter().map(|c| shuffle_nested(c, rng)).collect();
            cs.shuffle(rng);
            FilterExpr::And(cs)
        }
        FilterExpr::Or(cs) => FilterExpr::Or(cs.iter().map(|c| shuffle_nested(c, rng)).collect()),
        FilterExpr::Not(c) => FilterExpr::Not(Box::new(shuffle_nested(c, rng))),
        FilterExpr::Group(c) => FilterExpr::Group(Box::new(shuffle_nested(c, rng))),
        leaf => leaf.clone(),
    }
}

/// Structural identity independent of the library: flattened `And`/`Or`
/// children in sorted debug order.
fn normal_form(e: &FilterExpr) -> String {
    fn collect(e: &FilterExpr, and: bool, out: &mut Vec<String>) {
        match (e, and) {
            (FilterExpr::And(cs), true) | (FilterExpr::Or(cs), false) => cs.iter().for_each(|c| collect(c, and, out)),
            _ => out.push(normal_form(e)),
        }
    }
    match e {
        FilterExpr::And(_) | FilterExpr::Or(_) => {
            let and = matches!(e, FilterExpr::And(_));
            let mut parts = Vec::new();
            collect(e, and, &mut parts);
            parts.sort();
            format!("{}[{}]", if and { "and" } else { "or" }, parts.join(";"))
        }
        FilterExpr::Not(c) => format!("not[{}]", normal_form(c)),
        FilterExpr::Group(c) => format!("group[{}]", normal_form(c)),
        leaf => format!("{leaf:?}"),
    }
}

fn key_normalization() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let mut checked = 0usize;
    for i in 0..1000 {
        let n = rng.random_range(2..=5);
        let children: Vec<_> = (0..n).map(|_| random_filter(&mut rng, 2)).collect();
        let key = Query::new("Products").with_filter(FilterExpr::And(children.clone())).cache_key();
        for p in permutations(&children) {
            let permuted = shuffle_nested(&FilterExpr::And(p), &mut rng);
            let q = Query::new("Products").with_filter(permuted);
            check(q.cache_key() == key, || format!("filter {i}: {} keyed differently", q.serialize_odata()))?;
            checked += 1;
        }
    }

    let mut seen = HashSet::new();
    let mut keys = HashSet::new();
    while seen.len() < 10_000 {
        let mut q = Query::new("Products");
        let n = rng.random_range(1..=3);
        let children: Vec<_> = (0..n).map(|_| random_leaf(&mut rng)).collect();
        let filter = if n == 1 { children[0].clone() } else { FilterExpr::And(children) };
        let mut shape = normal_form(&filter);
        q.filter = Some(filter);
        if rng.random_bool(0.3) {
            let top = rng.random_range(1..100);
            q.top = Some(top);
            shape.push_str(&format!("|top {top}"));
        }
        if rng.random_bool(0.3) {
            let key = if rng.random_bool(0.5) { OrderKey::asc(f("Price")) } else { OrderKey::desc(f("Rating")) };
            shape.push_str(&format!("|order {key:?}"));
            q.order_by = vec![key];
        }
        if seen.insert(shape) {
            keys.insert(q.cache_key());
        }
    }
    check(keys.len() == 10_000, || format!("{} distinct keys for 10000 distinct queries", keys.len()))?;
    Ok(format!("{checked} permutations keyed alike, 10000 distinct queries gave 10000 keys"))
}

// 8

async fn end_to_end_caching() -> Outcome {
    let cfg = default_config(42);
    let (gw, backend) = Gateway::mock(&cfg, store(), Arc::new(ManualClock::new()));
    let query = "filter=category:Books,price<20&sort=-rating&top=5";
    let first = gw.handle_read("Products", query).await;
    check(first.status == 200 && first.header("X-ODataX-Cache") == Some("miss"), || {
        format!("first response {} {:?}", first.status, first.header("X-ODataX-Cache"))
    })?;
    let reads = backend.read_calls();
    let second = gw.handle_read("Products", query).await;
    check(second.header("X-ODataX-Cache") == Some("hit"), || "second response not a hit".into())?;
    check(backend.read_calls() == reads, || "hit reached the backend".into())?;
    check(second.body_str() == first.body_str(), || "cached body differs".into())?;

    // A write elsewhere leaves the entry alone.
    let order = json!({"CustomerId": 1, "ProductId": 1, "Total": 3.5, "Status": "pending", "Customer": [1], "Product": [1]});
    gw.handle_write(WriteMethod::Post, "Orders", None, order.to_string().as_bytes()).await;
    let third = gw.handle_read("Products", query).await;
    check(third.header("X-ODataX-Cache") == Some("hit"), || "write to Orders evicted a Products entry".into())?;

    let top_id = first.body_json().unwrap()["value"][0]["Id"].as_i64().unwrap();
    let patch = gw
        .handle_write(WriteMethod::Patch, "Products", Some(&top_id.to_string()), br#"{"Category": "Toys"}"#)
        .await;
    check(patch.status < 300, || format!("patch failed: {}", patch.body_str()))?;
    let fourth = gw.handle_read("Products", query).await;
    check(fourth.header("X-ODataX-Cache") == Some("miss"), || "read after mutation was not a miss".into())?;
    check(backend.read_calls() == reads + 1, || "miss did not reach the backend".into())?;
    let fresh = results_to_json(&evaluate(&parse(query, "Products"), &gw.store().unwrap()).unwrap());
    check(fourth.body_json() == Some(fresh), || "read after mutation is stale".into())?;
    check(
        fourth.body_json().unwrap()["value"].as_array().unwrap().iter().all(|r| r["Id"] != top_id),
        || "patched product still listed".into(),
    )?;
    Ok("hit with zero backend calls, miss and fresh rows after mutation".into())
}

// 9

async fn bench_bands() -> Outcome {
    let started = Instant::now();
    let cfg = default_config(42);
    let a = bench::run(&cfg, &Workload::default()).await.map_err(|e| e.to_string())?;
    let b = bench::run(&cfg, &Workload::default()).await.map_err(|e| e.to_string())?;
    check(a == b, || "same seed gave different reports".into())?;
    check((0.50..=0.80).contains(&a.hit_rate), || format!("hit rate {}", a.hit_rate))?;
    check((0.30..=0.55).contains(&a.backend_load_reduction), || {
        format!("backend load reduction {}", a.backend_load_reduction)
    })?;
    let frozen = (a.hits, a.misses, a.bypasses, a.rejections, a.backend_reads, a.mutations);
    check(frozen == (4162, 2765, 2917, 45, 5682, 111), || format!("counters drifted: {frozen:?}"))?;
    Ok(format!(
        "hit rate {:.3}, load reduction {:.3}, deterministic, {:.1}s for two runs",
        a.hit_rate,
        a.backend_load_reduction,
        started.elapsed().as_secs_f64()
    ))
}

// 10

async fn backward_compatibility() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus");
    let cases = load_corpus(&dir.join("traditional.json")).map_err(|e| e.to_string())?;
    check(cases.len() >= 50, || format!("only {} cases", cases.len()))?;
    let cfg = default_config(42);
    let (gw, backend) = conformance_gateway(&cfg).map_err(|e| e.to_string())?;
    let report = run_cases(&gw, &backend, &cases, &dir).await;
    if let Some(r) = report.failures().next() {
        return Err(format!("{}: {}", r.name, r.diffs.join("; ")));
    }

    let mut plain_cfg = cfg.clone();
    plain_cfg.features = Features::none();
    let (plain, plain_backend) = conformance_gateway(&plain_cfg).map_err(|e| e.to_string())?;
    let data = gw.store().unwrap();
    for case in &cases {
        let encoded = odatax::conformance::encode_params(&case.params);
        let full = gw.handle_read(&case.entity_set, &encoded).await;
        let direct = results_to_json(&evaluate(&parse(&case.params, &case.entity_set), &data).unwrap());
        check(full.body_json() == Some(direct), || format!("{}: gateway result differs from direct evaluation", case.name))?;
        let before = plain_backend.recorded_queries().len();
        let off = plain.handle_read(&case.entity_set, &encoded).await;
        check((off.status, off.body_str()) == (full.status, full.body_str()), || {
            format!("{}: features off changed the response", case.name)
        })?;
        let sent = plain_backend.recorded_queries();
        check(sent.len() == before + 1, || format!("{}: features off did not forward once", case.name))?;
        let pairs: Vec<(String, String)> = form_urlencoded::parse(sent[before].as_bytes()).into_owned().collect();
        let forwarded = parse_query_params(&pairs, &model(), &case.entity_set).map_err(|e| e.to_string())?;
        check(forwarded.cache_key() == parse(&case.params, &case.entity_set).cache_key(), || {
            format!("{}: features off forwarded a different query", case.name)
        })?;
    }
    Ok(format!("{} traditional cases identical with features on and off", cases.len()))
}

// 11

fn payload(rng: &mut StdRng) -> String {
    const PIECES: [&str; 20] = [
        "'", "''", "\"", " or ", " and ", "Price gt 0", ")", "(", "&", "$filter=", "=", ",", ":", "{category}", "}",
        "%27", " ", "Books", "ö", "\\",
    ];
    let n = rng.random_range(1..=8);
    (0..n).map(|_| PIECES[rng.random_range(0..PIECES.len())]).collect()
}

async fn injection_safety() -> Outcome {
    let model = Arc::new(model());
    let registry = NamedQueryRegistry::new(model.clone());
    registry.register_all(example_definitions(), false).map_err(|e| e.to_string())?;
    let fixed = registry
        .expand("affordableBooks", &BTreeMap::new(), "Products")
        .map_err(|e| e.to_string())?
        .query;
    let (gw, _) = Gateway::mock(&default_config(42), store(), Arc::new(ManualClock::new()));
    gw.registry().register_all(example_definitions(), false).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(11);
    for i in 0..1000 {
        let value = payload(&mut rng);
        let args: BTreeMap<String, String> = [("category".to_string(), value.clone())].into();
        if i % 2 == 0 {
            let q = registry
                .expand("topRatedInCategory", &args, "Products")
                .map_err(|e| format!("case {i} {value:?}: {e}"))?
                .query;
            let confined = q.filter == Some(FilterExpr::cmp(f("Category"), CompareOp::Eq, Literal::string(value.as_str())))
                && filter_string_literals(&q) == [value.clone()];
            check(confined, || format!("case {i} {value:?}: {}", q.serialize_odata()))?;
            let reparsed = parse_query_params(&split_options(&q.serialize_odata()), &model, "Products");
            check(reparsed.as_ref() == Ok(&q), || format!("case {i} {value:?}: expansion does not re-parse"))?;
        } else {
            // The alias takes no parameters, so a payload can only be refused.
            let r = registry.expand("affordableBooks", &args, "Products");
            check(matches!(r, Err(NamedQueryError::UnexpectedParameter(_))), || {
                format!("case {i} {value:?}: affordableBooks accepted {r:?}")
            })?;
        }
        if i % 10 == 0 {
            let name = if i % 20 == 0 { "topRatedInCategory" } else { "affordableBooks" };
            let raw = form_urlencoded::Serializer::new(String::new())
                .append_pair("query", name)
                .append_pair("category", &value)
                .finish();
            let resp = gw.handle_read("Products", &raw).await;
            if name == "affordableBooks" {
                check(resp.status == 400, || format!("case {i}: gateway accepted a payload for affordableBooks"))?;
                continue;
            }
            check(resp.status == 200, || format!("case {i} {value:?}: {}", resp.body_str()))?;
            let trace = gw.last_trace().and_then(|t| t.query).unwrap_or_default();
            let q = parse_query_params(&split_options(&trace), &model, "Products")
                .map_err(|e| format!("case {i} {value:?}: forwarded query does not parse: {e}"))?;
            check(filter_string_literals(&q) == [value.clone()] && q.top == Some(10), || {
                format!("case {i} {value:?}: forwarded {trace}")
            })?;
        }
    }
    check(fixed.serialize_odata() == "$filter=Price lt 20 and Category eq 'Books'&$orderby=Rating desc", || {
        "affordableBooks changed".into()
    })?;
    Ok("1000/1000 payloads confined to one literal or refused".into())
}

type Check<'a> = Pin<Box<dyn Future<Output = Outcome> + 'a>>;

#[tokio::test]
async fn acceptance() {
    let data = store();
    let stats = build_stats(&data);
    let criteria: Vec<(&str, Check)> = vec![
        ("syntax translation exactness", Box::pin(async { translation_exactness() })),
        ("semantic equivalence", Box::pin(async { semantic_equivalence(&data) })),
        ("compression measurement", Box::pin(async { compression() })),
        ("cost model worked example", Box::pin(async { worked_example() })),
        ("cost monotonicity", Box::pin(async { cost_monotonicity(&stats) })),
        ("selectivity sanity", Box::pin(async { selectivity_sanity(&data, &stats) })),
        ("cache key normalization", Box::pin(async { key_normalization() })),
        ("end-to-end caching", Box::pin(end_to_end_caching())),
        ("bench harness bands", Box::pin(bench_bands())),
        ("backward compatibility", Box::pin(backward_compatibility())),
        ("named query injection safety", Box::pin(injection_safety())),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let outcome = run.await;
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({detail}) [{secs:.1}s]", i + 1),
            Err(why) => {
                println!("criterion {:>2} FAIL {name}: {why} [{secs:.1}s]", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
