//! Desk-scale replay of a read-heavy catalogue workload through the full
//! gateway pipeline, plus the query-length comparison of the two syntaxes.
//!
//! Reads are drawn from a fixed set of request patterns. Within a pattern,
//! instance popularity is Zipf-distributed. Every request is rendered with
//! random surface variation (syntax, conjunct order, field casing, named
//! aliases) so the cache only sees reuse through its normalized keys.

use std::sync::Arc;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Zipf};
use serde::Serialize;
use serde_json::json;

use crate::cache::ManualClock;
use crate::conformance::encode_params;
use crate::datagen::{self, CATEGORIES, COUNTRIES, NOUNS, ORDER_STATUS};
use crate::gateway::{Gateway, GatewayConfig, GatewayError, WriteMethod};
use crate::model::EntityModel;
use crate::named::example_definitions;
use crate::parser::{parse_mixed, QueryError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Workload {
    pub queries: usize,
    pub zipf: f64,
    pub seed: u64,
    /// Every read is a query never seen before.
    pub distinct: bool,
    pub mutation_rate: f64,
    /// Share of reads that are per-customer order lookups.
    pub user_specific_rate: f64,
    /// Share of reads that are deliberately expensive.
    pub abusive_rate: f64,
    /// Virtual time between requests.
    pub tick_ms: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            queries: 10_000,
            zipf: 1.1,
            seed: datagen::DEFAULT_SEED,
            distinct: false,
            mutation_rate: 0.01,
            user_specific_rate: 0.3,
            abusive_rate: 0.005,
            tick_ms: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LengthSample {
    pub entity_set: String,
    pub simplified: String,
    pub traditional: String,
    pub simplified_len: usize,
    pub traditional_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchReport {
    pub workload: Workload,
    pub requests: u64,
    pub reads: u64,
    pub mutations: u64,
    pub hits: u64,
    pub misses: u64,
    pub bypasses: u64,
    pub rejections: u64,
    pub errors: u64,
    pub backend_reads: u64,
    pub invalidated_entries: u64,
    /// hits / (hits + misses), over cacheable lookups.
    pub hit_rate: f64,
    /// Same ratio over the second half of the run.
    pub hit_rate_after_warmup: f64,
    /// 1 - backend reads / reads that were not rejected.
    pub backend_load_reduction: f64,
    pub rejection_rate: f64,
    /// Mean of simplified length / traditional length over the sample.
    pub mean_compression_ratio: f64,
    /// 1 - mean_compression_ratio.
    pub mean_length_reduction: f64,
    pub compression_sample: Vec<LengthSample>,
}

/// The documented twelve-query sample; the first two are the catalogue
/// examples `price<20,category:Books` and `price>100, category:Books` sorted
/// by price.
pub const COMPRESSION_SAMPLE: [(&str, &str); 12] = [
    ("Products", "filter=price<20,category:Books"),
    ("Products", "filter=price>100, category:Books&sort=-price"),
    ("Products", "filter=category:Electronics&sort=-rating&top=10"),
    ("Products", "filter=rating>=4,instock=true&sort=price"),
    ("Products", "filter=price<=50&select=name,price&top=20"),
    ("Products", "filter=category:Garden,price>10,price<30"),
    ("Products", "sort=-price&top=5"),
    ("Products", "filter=supplierid=3&select=name,category"),
    ("Reviews", "filter=rating>=4,verified=true&top=10"),
    ("Orders", "filter=status:shipped,total>100&sort=-total"),
    ("Users", "filter=country:DE&select=name,email"),
    ("Products", "filter=instock=false,category:Toys&skip=20&top=10"),
];

pub fn compression_sample(model: &EntityModel) -> Result<Vec<LengthSample>, QueryError> {
    COMPRESSION_SAMPLE
        .iter()
        .map(|(set, simplified)| {
            let traditional = parse_mixed(simplified, model, set)?.query.serialize_odata();
            Ok(LengthSample {
                entity_set: set.to_string(),
                simplified: simplified.to_string(),
                simplified_len: simplified.chars().count(),
                traditional_len: traditional.chars().count(),
                traditional,
            })
        })
        .collect()
}

pub fn mean_compression_ratio(sample: &[LengthSample]) -> f64 {
    if sample.is_empty() {
        return 0.0;
    }
    sample
        .iter()
        .map(|s| s.simplified_len as f64 / s.traditional_len as f64)
        .sum::<f64>()
        / sample.len() as f64
}

/// Default bench gateway: generated 10k-product catalogue, every feature on,
/// order lookups by customer marked user-specific.
pub fn default_config(seed: u64) -> GatewayConfig {
    let mut cfg = GatewayConfig::mock_generated("ecommerce-small", seed);
    cfg.cache.non_cacheable_fields.insert("CustomerId".into());
    cfg
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("bench needs a mock backend")]
    NotMock,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

/// Builds the gateway for `cfg` on a virtual clock and replays `workload`.
pub async fn run(cfg: &GatewayConfig, workload: &Workload) -> Result<BenchReport, BenchError> {
    if !matches!(cfg.backend, crate::gateway::BackendConfig::Mock(_)) {
        return Err(BenchError::NotMock);
    }
    let clock = Arc::new(ManualClock::new());
    let gw = Gateway::from_config_with_clock(cfg, clock.clone())?;
    if cfg.features.named_queries {
        for def in example_definitions() {
            if gw.registry().get(&def.name).is_none() {
                // Only fails on a name clash with the loaded registry.
                let _ = gw.registry().register(def);
            }
        }
    }
    replay(&gw, &clock, workload).await
}

struct Sizes {
    products: usize,
    users: usize,
}

/// Replays `workload` through `gw`, advancing `clock` by one tick per request.
pub async fn replay(gw: &Gateway, clock: &ManualClock, workload: &Workload) -> Result<BenchReport, BenchError> {
    let store = gw.store().ok_or(BenchError::NotMock)?;
    let sizes = Sizes {
        products: store.row_count("Products").max(1),
        users: store.row_count("Users").max(1),
    };
    let named = gw.registry().get("topRatedInCategory").is_some();
    let mut rng = StdRng::seed_from_u64(workload.seed);
    let patterns = patterns(&sizes);
    let zipfs: Vec<Zipf<f64>> = patterns
        .iter()
        .map(|p| Zipf::new(p.instances as f64, workload.zipf).expect("valid zipf parameters"))
        .collect();
    // Popularity rank -> instance, shuffled once per pattern.
    let perms: Vec<Vec<usize>> = patterns
        .iter()
        .map(|p| {
            let mut v: Vec<usize> = (0..p.instances).collect();
            v.shuffle(&mut rng);
            v
        })
        .collect();
    let total_weight: f64 = patterns.iter().map(|p| p.weight).sum();

    let (mut mutations, mut reads) = (0u64, 0u64);
    let mut half = None;
    for i in 0..workload.queries {
        clock.advance(Duration::from_millis(workload.tick_ms));
        if i == workload.queries / 2 {
            let m = gw.metrics();
            half = Some((m.hits, m.misses));
        }
        if rng.random_bool(workload.mutation_rate.clamp(0.0, 1.0)) {
            mutate(gw, &mut rng, &sizes).await;
            mutations += 1;
            continue;
        }
        reads += 1;
        let roll: f64 = rng.random();
        let (set, raw) = if roll < workload.user_specific_rate {
            let customer = rng.random_range(1..=sizes.users);
            let raw = if rng.random_bool(0.5) {
                format!("filter=customerid={customer}&sort=-total")
            } else {
                format!("$filter=CustomerId eq {customer}&$orderby=Total desc")
            };
            ("Orders", raw)
        } else if roll < workload.user_specific_rate + workload.abusive_rate {
            ("Products", abusive(&mut rng))
        } else if workload.distinct {
            ("Products", format!("$filter=Price ge {}.{:02}&$top=10", i / 100, i % 100))
        } else {
            let mut x = rng.random::<f64>() * total_weight;
            let k = patterns
                .iter()
                .position(|p| {
                    x -= p.weight;
                    x <= 0.0
                })
                .unwrap_or(patterns.len() - 1);
            let rank = (zipfs[k].sample(&mut rng) as usize).clamp(1, patterns[k].instances) - 1;
            let instance = perms[k][rank];
            (patterns[k].set, (patterns[k].render)(instance, &mut rng, named))
        };
        gw.handle_read(set, &encode_params(&raw)).await;
    }

    let m = gw.metrics();
    let (h0, m0) = half.unwrap_or((0, 0));
    let sample = compression_sample(gw.model())?;
    let ratio = mean_compression_ratio(&sample);
    let non_rejected = reads - m.rejections;
    Ok(BenchReport {
        workload: *workload,
        requests: m.requests,
        reads,
        mutations,
        hits: m.hits,
        misses: m.misses,
        bypasses: m.bypasses,
        rejections: m.rejections,
        errors: m.errors,
        backend_reads: m.backend_reads,
        invalidated_entries: m.invalidated_entries,
        hit_rate: m.hit_rate,
        hit_rate_after_warmup: fraction(m.hits - h0, m.hits - h0 + m.misses - m0),
        backend_load_reduction: if non_rejected == 0 {
            0.0
        } else {
            1.0 - m.backend_reads as f64 / non_rejected as f64
        },
        rejection_rate: fraction(m.rejections, reads),
        mean_compression_ratio: ratio,
        mean_length_reduction: 1.0 - ratio,
        compression_sample: sample,
    })
}

fn fraction(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

async fn mutate(gw: &Gateway, rng: &mut StdRng, sizes: &Sizes) {
    // Mostly orders, then reviews; catalogue edits are rare.
    match rng.random_range(0..10) {
        0 => {
            let id = rng.random_range(1..=sizes.products).to_string();
            let price = (rng.random_range(100..200_000) as f64) / 100.0;
            let body = json!({ "Price": price }).to_string();
            gw.handle_write(WriteMethod::Patch, "Products", Some(&id), body.as_bytes()).await;
        }
        1..=3 => {
            let product = rng.random_range(1..=sizes.products);
            let author = rng.random_range(1..=sizes.users);
            let body = json!({
                "ProductId": product,
                "AuthorId": author,
                "Rating": rng.random_range(1..=5),
                "Title": "Fresh review",
                "Verified": false,
                "Author": [author],
                "Product": [product],
            })
            .to_string();
            gw.handle_write(WriteMethod::Post, "Reviews", None, body.as_bytes()).await;
        }
        _ => {
            let customer = rng.random_range(1..=sizes.users);
            let product = rng.random_range(1..=sizes.products);
            let body = json!({
                "CustomerId": customer,
                "ProductId": product,
                "Total": 42.5,
                "Status": ORDER_STATUS[0],
                "Customer": [customer],
                "Product": [product],
            })
            .to_string();
            gw.handle_write(WriteMethod::Post, "Orders", None, body.as_bytes()).await;
        }
    }
}

/// A crawler-style filter: nested disjunctions of substring searches.
fn abusive(rng: &mut StdRng) -> String {
    let a = NOUNS[rng.random_range(0..NOUNS.len())];
    let b = NOUNS[rng.random_range(0..NOUNS.len())];
    format!(
        "$filter=((((((contains(Name,'{a}') or contains(Name,'{b}'))))))) and Price gt 1&$expand=Reviews($expand=Author)"
    )
}

type Render = fn(usize, &mut StdRng, bool) -> String;

struct Pattern {
    set: &'static str,
    weight: f64,
    instances: usize,
    render: Render,
}

fn patterns(sizes: &Sizes) -> Vec<Pattern> {
    vec![
        Pattern {
            set: "Products",
            weight: 0.35,
            instances: CATEGORIES.len() * 6,
            render: render_browse,
        },
        Pattern {
            set: "Products",
            weight: 0.20,
            instances: CATEGORIES.len() * PRICE_CAPS.len(),
            render: render_price_band,
        },
        Pattern {
            set: "Products",
            weight: 0.10,
            instances: CATEGORIES.len() * RATING_FLOORS.len(),
            render: render_rated,
        },
        Pattern {
            set: "Products",
            weight: 0.15,
            instances: sizes.products,
            render: render_detail,
        },
        Pattern {
            set: "Reviews",
            weight: 0.10,
            instances: sizes.products,
            render: render_reviews,
        },
        Pattern {
            set: "Products",
            weight: 0.05,
            instances: NOUNS.len(),
            render: render_search,
        },
        Pattern {
            set: "Products",
            weight: 0.05,
            instances: COUNTRIES.len(),
            render: render_supplier_country,
        },
    ]
}

const PRICE_CAPS: [u32; 4] = [20, 50, 100, 250];
const RATING_FLOORS: [&str; 3] = ["3.5", "4", "4.5"];

/// Field name as a developer might type it in the simplified syntax.
fn casing(rng: &mut StdRng, name: &str) -> String {
    if rng.random_bool(0.5) {
        name.to_lowercase()
    } else {
        name.to_string()
    }
}

/// Joins conditions in random order.
fn shuffled(rng: &mut StdRng, mut parts: Vec<String>, sep: &str) -> String {
    parts.shuffle(rng);
    parts.join(sep)
}

fn render_browse(i: usize, rng: &mut StdRng, named: bool) -> String {
    let category = CATEGORIES[i / 6];
    let (field, desc) = [("Price", false), ("Price", true), ("Rating", true)][i % 6 / 2];
    let top = [10, 20][i % 2];
    if named && field == "Rating" && top == 10 && rng.random_bool(0.5) {
        return format!("query=topRatedInCategory&category={category}");
    }
    let sort = |rng: &mut StdRng| format!("{}{}", if desc { "-" } else { "" }, casing(rng, field));
    let orderby = format!("{field}{}", if desc { " desc" } else { "" });
    let mut parts = if rng.random_bool(0.5) {
        vec![
            format!("filter={}:{category}", casing(rng, "Category")),
            format!("sort={}", sort(rng)),
            format!("top={top}"),
        ]
    } else {
        vec![
            format!("$filter=Category eq '{category}'"),
            format!("$orderby={orderby}"),
            format!("$top={top}"),
        ]
    };
    parts.shuffle(rng);
    parts.join("&")
}

fn render_price_band(i: usize, rng: &mut StdRng, _: bool) -> String {
    let category = CATEGORIES[i / PRICE_CAPS.len()];
    let cap = PRICE_CAPS[i % PRICE_CAPS.len()];
    if rng.random_bool(0.5) {
        let conds = vec![
            format!("{}<{cap}", casing(rng, "Price")),
            format!("{}:{category}", casing(rng, "Category")),
        ];
        format!("filter={}&sort=price&top=20", shuffled(rng, conds, ","))
    } else {
        let conds = vec![format!("Price lt {cap}"), format!("Category eq '{category}'")];
        format!("$filter={}&$orderby=Price&$top=20", shuffled(rng, conds, " and "))
    }
}

fn render_rated(i: usize, rng: &mut StdRng, _: bool) -> String {
    let category = CATEGORIES[i / RATING_FLOORS.len()];
    let floor = RATING_FLOORS[i % RATING_FLOORS.len()];
    if rng.random_bool(0.5) {
        let conds = vec![
            format!("{}>={floor}", casing(rng, "Rating")),
            format!("{}=true", casing(rng, "InStock")),
            format!("{}:{category}", casing(rng, "Category")),
        ];
        format!("filter={}&top=20", shuffled(rng, conds, ","))
    } else {
        let conds = vec![
            format!("Rating ge {floor}"),
            "InStock eq true".to_string(),
            format!("Category eq '{category}'"),
        ];
        format!("$filter={}&$top=20", shuffled(rng, conds, " and "))
    }
}

fn render_detail(i: usize, rng: &mut StdRng, _: bool) -> String {
    let id = i + 1;
    let parts = vec![format!("$filter=Id eq {id}"), "$expand=Reviews".to_string()];
    shuffled(rng, parts, "&")
}

fn render_reviews(i: usize, rng: &mut StdRng, _: bool) -> String {
    let id = i + 1;
    if rng.random_bool(0.5) {
        format!("filter={}={id}&sort=-rating", casing(rng, "ProductId"))
    } else {
        format!("$orderby=Rating desc&$filter=ProductId eq {id}")
    }
}

fn render_search(i: usize, rng: &mut StdRng, _: bool) -> String {
    let parts = vec![
        format!("$filter=contains(Name,'{}')", NOUNS[i]),
        "$top=20".to_string(),
    ];
    shuffled(rng, parts, "&")
}

fn render_supplier_country(i: usize, rng: &mut StdRng, _: bool) -> String {
    if rng.random_bool(0.5) {
        format!("filter=supplier/country:{}&top=20", COUNTRIES[i])
    } else {
        format!("$top=20&$filter=Supplier/Country eq '{}'", COUNTRIES[i])
    }
}
