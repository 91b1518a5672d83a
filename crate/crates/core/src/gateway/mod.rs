//! The request pipeline: decode, expand named queries, parse both syntaxes,
//! merge, key, look up the cache, check cost, forward, store, respond.
//!
//! [`Gateway`] is transport independent; [`http::router`] exposes it over
//! HTTP.

pub mod backend;
pub mod config;
pub mod http;
pub mod metrics;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use arc_swap::ArcSwap;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::ast::Query;
use crate::cache::{cacheability, response_headers, touched_sets, Clock, QueryCache, SystemClock};
use crate::cost::{check, estimate, CostConfig, CostDecision};
use crate::datagen;
use crate::model::EntityModel;
use crate::named::{NamedQueryError, NamedQueryRegistry, QueryHints};
use crate::parser::{merge, parse_simplified_params, parse_traditional_params, QueryError, QueryFragment};
use crate::stats::{build_stats, StatisticsCatalog};
use crate::store::{load_dataset, EntityStore};

pub use backend::{Backend, BackendError, BackendResponse, MockBackend, ProxyBackend, WriteMethod};
pub use config::{BackendConfig, Features, GatewayConfig, MockSource, StatsSource, TraceSink};
pub use metrics::{CacheOutcome, CostCheck, Decision, Metrics, MetricsSnapshot, RequestTrace};

use metrics::{CostObservation, TraceLog};

/// Parameter names with a meaning of their own on a read request. Anything
/// else binds to named-query parameters or is ignored.
pub const RESERVED_PARAMS: [&str; 6] = ["filter", "sort", "select", "top", "skip", "query"];

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayResponse {
    pub status: u16,
    pub content_type: String,
    pub headers: Vec<(String, String)>,
    pub body: Arc<[u8]>,
}

impl GatewayResponse {
    fn json(status: u16, body: &Value) -> Self {
        Self {
            status,
            content_type: "application/json".into(),
            headers: Vec::new(),
            body: body.to_string().into_bytes().into(),
        }
    }

    fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self::json(status, &json!({"error": {"code": code, "message": message.into()}}))
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn body_json(&self) -> Option<Value> {
        serde_json::from_slice(&self.body).ok()
    }

    pub fn body_str(&self) -> &str {
        std::str::from_utf8(&self.body).unwrap_or("")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    NamedQuery(#[from] NamedQueryError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
    #[error("cannot open trace file: {0}")]
    Trace(std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RebuildError {
    #[error("a statistics rebuild is already running")]
    AlreadyRunning,
    #[error("statistics can only be rebuilt when the gateway holds the data")]
    Unavailable,
}

/// Held while a statistics rebuild runs.
pub struct RebuildGuard<'a>(&'a AtomicBool);

impl Drop for RebuildGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

#[derive(Deserialize)]
struct RowCount {
    value: Vec<serde::de::IgnoredAny>,
}

pub struct Gateway {
    features: Features,
    cost: CostConfig,
    policy: crate::cache::CachePolicy,
    model: Arc<EntityModel>,
    backend: Arc<dyn Backend>,
    registry: NamedQueryRegistry,
    stats: ArcSwap<StatisticsCatalog>,
    stats_version: AtomicU64,
    rebuilding: AtomicBool,
    cache: QueryCache,
    metrics: Metrics,
    traces: TraceLog,
    next_id: AtomicU64,
}

impl Gateway {
    /// Builds a gateway from parts. Statistics start empty.
    pub fn new(
        cfg: &GatewayConfig,
        model: Arc<EntityModel>,
        backend: Arc<dyn Backend>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            features: cfg.features,
            cost: cfg.cost,
            policy: cfg.cache.clone(),
            registry: NamedQueryRegistry::new(model.clone()),
            model,
            backend,
            stats: ArcSwap::from_pointee(StatisticsCatalog::default()),
            stats_version: AtomicU64::new(0),
            rebuilding: AtomicBool::new(false),
            cache: QueryCache::new(cfg.cache.capacity, clock),
            metrics: Metrics::default(),
            traces: TraceLog::new(None),
            next_id: AtomicU64::new(1),
        }
    }

    /// Mock-mode gateway over `store` with statistics built from it.
    pub fn mock(cfg: &GatewayConfig, store: EntityStore, clock: Arc<dyn Clock>) -> (Self, Arc<MockBackend>) {
        let model = store.model().clone();
        let stats = match cfg.stats_source() {
            StatsSource::RebuildOnStart => Some(build_stats(&store)),
            _ => None,
        };
        let backend = Arc::new(MockBackend::new(store));
        let gw = Self::new(cfg, model, backend.clone(), clock);
        if let Some(s) = stats {
            gw.set_stats(s);
        }
        (gw, backend)
    }

    /// Everything the config describes: data, statistics, registry, trace sink.
    pub fn from_config(cfg: &GatewayConfig) -> Result<Self, GatewayError> {
        Self::from_config_with_clock(cfg, Arc::new(SystemClock::new()))
    }

    /// [`Gateway::from_config`] with cache expiry driven by `clock`.
    pub fn from_config_with_clock(cfg: &GatewayConfig, clock: Arc<dyn Clock>) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let (mut gw, store) = match &cfg.backend {
            BackendConfig::Proxy { url } => {
                let model = Arc::new(EntityModel::load(cfg.model.as_ref().expect("validated"))?);
                (Self::new(cfg, model, Arc::new(ProxyBackend::new(url)), clock), None)
            }
            BackendConfig::Mock(source) => {
                let store = match source {
                    MockSource::Data(files) => load_dataset(cfg.model.as_ref().expect("validated"), files)?,
                    MockSource::Generate { dataset, seed } => datagen::by_name(dataset, *seed)
                        .expect("validated dataset name")
                        .into_store()?,
                };
                let model = store.model().clone();
                let backend = Arc::new(MockBackend::new(store.clone()));
                (Self::new(cfg, model, backend, clock), Some(store))
            }
        };
        match (cfg.stats_source(), store) {
            (StatsSource::RebuildOnStart, Some(store)) => gw.set_stats(build_stats(&store)),
            (StatsSource::File(p), _) => gw.set_stats(StatisticsCatalog::load(p)?),
            _ => {}
        }
        if let Some(path) = &cfg.named_queries {
            gw.registry.load_registry(path)?;
        }
        let sink: Option<Box<dyn Write + Send>> = match &cfg.trace {
            TraceSink::Off => None,
            TraceSink::Stderr => Some(Box::new(std::io::stderr())),
            TraceSink::File(p) => Some(Box::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(GatewayError::Trace)?,
            )),
        };
        gw.traces = TraceLog::new(sink);
        Ok(gw)
    }

    pub fn model(&self) -> &Arc<EntityModel> {
        &self.model
    }

    /// Backend data, in mock mode.
    pub fn store(&self) -> Option<Arc<EntityStore>> {
        self.backend.store()
    }

    pub fn registry(&self) -> &NamedQueryRegistry {
        &self.registry
    }

    pub fn cache(&self) -> &QueryCache {
        &self.cache
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.metrics.snapshot()
    }

    pub fn traces(&self) -> Vec<RequestTrace> {
        self.traces.recent()
    }

    pub fn last_trace(&self) -> Option<RequestTrace> {
        self.traces.last()
    }

    pub fn stats(&self) -> Arc<StatisticsCatalog> {
        self.stats.load_full()
    }

    pub fn set_stats(&self, stats: StatisticsCatalog) {
        self.stats.store(Arc::new(stats));
        self.stats_version.fetch_add(1, Ordering::SeqCst);
    }

    pub fn begin_rebuild(&self) -> Result<RebuildGuard<'_>, RebuildError> {
        self.rebuilding
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .map(|_| RebuildGuard(&self.rebuilding))
            .map_err(|_| RebuildError::AlreadyRunning)
    }

    /// Rebuilds statistics from the backend's data and swaps them in.
    pub fn rebuild_stats(&self) -> Result<u64, RebuildError> {
        let _guard = self.begin_rebuild()?;
        let store = self.backend.store().ok_or(RebuildError::Unavailable)?;
        self.set_stats(build_stats(&store));
        Ok(self.stats_version.load(Ordering::SeqCst))
    }

    fn new_trace(&self, method: &str, set: &str, raw: &str) -> RequestTrace {
        Metrics::inc(&self.metrics.requests);
        RequestTrace {
            request_id: self.next_id.fetch_add(1, Ordering::SeqCst),
            method: method.to_string(),
            entity_set: set.to_string(),
            raw_params: raw.to_string(),
            query: None,
            named_query: None,
            cost: None,
            cost_check: if self.features.cost_check {
                CostCheck::Bypass
            } else {
                CostCheck::Disabled
            },
            cache: CacheOutcome::Bypass,
            upstream_latency_ms: None,
            decision: Decision::Error,
            status: 0,
            warnings: Vec::new(),
        }
    }

    fn finish(&self, mut trace: RequestTrace, resp: GatewayResponse) -> GatewayResponse {
        trace.status = resp.status;
        if trace.decision == Decision::Error {
            Metrics::inc(&self.metrics.errors);
        }
        self.traces.record(trace);
        resp
    }

    /// Resolves the raw parameters of a read into a query plus named-query
    /// hints. Warnings are appended to `warnings`.
    pub fn resolve(
        &self,
        set: &str,
        params: &[(String, String)],
        warnings: &mut Vec<String>,
    ) -> Result<(Query, Option<QueryHints>), GatewayResponse> {
        let named = self.features.named_queries;
        let simplified = self.features.simplified_syntax;
        let is_reserved = |k: &str| match k {
            "query" => named,
            "filter" | "sort" | "select" | "top" | "skip" => simplified,
            _ => k.starts_with('$'),
        };
        let query_name = params.iter().find(|(k, _)| k == "query" && named).map(|(_, v)| v.clone());
        if named && params.iter().filter(|(k, _)| k == "query").count() > 1 {
            return Err(invalid_query(&QueryError::DuplicateOption("query".into())));
        }
        let mut hints = None;
        let traditional = match &query_name {
            Some(name) => {
                if let Some((k, _)) = params.iter().find(|(k, _)| k.starts_with('$')) {
                    return Err(GatewayResponse::json(
                        400,
                        &json!({"error": {
                            "code": "InvalidQuery",
                            "message": format!("`{k}` cannot be combined with a named query")
                        }}),
                    ));
                }
                let mut args = BTreeMap::new();
                for (k, v) in params.iter().filter(|(k, _)| !is_reserved(k)) {
                    if args.insert(k.clone(), v.clone()).is_some() {
                        return Err(invalid_query(&QueryError::DuplicateOption(k.clone())));
                    }
                }
                let expanded = self
                    .registry
                    .expand(name, &args, set)
                    .map_err(named_error)?;
                hints = Some(expanded.hints);
                QueryFragment::from_query(expanded.query)
            }
            None => {
                for (k, _) in params.iter().filter(|(k, _)| !is_reserved(k)) {
                    warnings.push(format!("parameter `{k}` ignored"));
                }
                parse_traditional_params(params, &self.model, set).map_err(|e| invalid_query(&e))?
            }
        };
        let simplified_frag = if simplified {
            parse_simplified_params(params, &self.model, set).map_err(|e| invalid_query(&e))?
        } else {
            QueryFragment::default()
        };
        let merged = merge(simplified_frag, traditional, set);
        warnings.extend(merged.warnings);
        Ok((merged.query, hints))
    }

    /// Handles `GET /odatax/{set}?{raw_query}`.
    pub async fn handle_read(&self, set: &str, raw_query: &str) -> GatewayResponse {
        Metrics::inc(&self.metrics.reads);
        let mut trace = self.new_trace("GET", set, raw_query);
        let resp = self.read_pipeline(set, raw_query, &mut trace).await;
        self.finish(trace, resp)
    }

    async fn read_pipeline(&self, set: &str, raw_query: &str, trace: &mut RequestTrace) -> GatewayResponse {
        if self.model.entity_set(set).is_none() {
            return GatewayResponse::error(
                404,
                "UnknownEntitySet",
                format!("unknown entity set `{set}`"),
            );
        }
        // (1) percent-decode
        let params: Vec<(String, String)> = form_urlencoded::parse(raw_query.as_bytes()).into_owned().collect();
        // (2)-(4) named expansion, parsing, merge
        let (query, hints) = match self.resolve(set, &params, &mut trace.warnings) {
            Ok(r) => r,
            Err(resp) => return resp,
        };
        trace.query = Some(query.serialize_odata());
        trace.named_query = hints.as_ref().map(|h| h.name.clone());
        // (5)-(6) canonical key and cacheability
        let key = query.cache_key();
        let cache_on = self.features.cache;
        let cacheable = cache_on && cacheability(&query, hints.as_ref(), &self.policy, &self.model);
        let ttl = self.policy.default_ttl_seconds;
        let warning_headers: Vec<(String, String)> = trace
            .warnings
            .iter()
            .map(|w| ("X-ODataX-Warning".to_string(), w.clone()))
            .collect();
        let cache_headers = |outcome: &str| -> Vec<(String, String)> {
            if !cache_on {
                return Vec::new();
            }
            let mut h: Vec<(String, String)> = response_headers(cacheable, &key, ttl)
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
            h.push(("X-ODataX-Cache".into(), outcome.into()));
            h
        };
        // (7) lookup
        if cacheable {
            if let Some(entry) = self.cache.lookup(&key) {
                Metrics::inc(&self.metrics.hits);
                trace.cache = CacheOutcome::Hit;
                trace.decision = Decision::ServedCache;
                let mut headers = cache_headers("hit");
                headers.extend(warning_headers);
                return GatewayResponse {
                    status: 200,
                    content_type: entry.content_type.clone(),
                    headers,
                    body: entry.body.clone(),
                };
            }
        }
        // (8) cost check on a miss
        let mut estimate_total = None;
        if self.features.cost_check {
            let cfg = CostConfig {
                threshold: hints.as_ref().and_then(|h| h.cost_limit).unwrap_or(self.cost.threshold),
                ..self.cost
            };
            let est = estimate(&query, &self.stats.load(), &cfg);
            let decision = check(&est);
            estimate_total = Some((est.total, est.projected_rows));
            trace.cost = Some(est);
            if let CostDecision::Reject(payload) = decision {
                Metrics::inc(&self.metrics.rejections);
                trace.cost_check = CostCheck::Rejected;
                trace.decision = Decision::RejectedCost;
                return GatewayResponse::json(
                    crate::cost::RejectPayload::HTTP_STATUS,
                    &payload.0,
                );
            }
            trace.cost_check = CostCheck::Accepted;
        }
        if cacheable {
            Metrics::inc(&self.metrics.misses);
            trace.cache = CacheOutcome::Miss;
        } else {
            Metrics::inc(&self.metrics.bypasses);
        }
        // (9) forward
        let started = Instant::now();
        Metrics::inc(&self.metrics.backend_reads);
        let upstream = self.backend.read(set, &query.to_url_query()).await;
        trace.upstream_latency_ms = Some(started.elapsed().as_secs_f64() * 1000.0);
        let upstream = match upstream {
            Ok(r) => r,
            Err(e) => return GatewayResponse::error(502, "UpstreamFailure", e.to_string()),
        };
        if !upstream.is_success() {
            return GatewayResponse {
                status: upstream.status,
                content_type: upstream.content_type,
                headers: warning_headers,
                body: upstream.body.into(),
            };
        }
        trace.decision = Decision::Forwarded;
        if let Some((total, projected)) = estimate_total {
            let actual = serde_json::from_slice::<RowCount>(&upstream.body)
                .ok()
                .map(|r| r.value.len() as u64);
            self.metrics.observe(CostObservation {
                request_id: trace.request_id,
                query: trace.query.clone().unwrap_or_default(),
                estimated_total: total,
                projected_rows: projected,
                actual_rows: actual,
            });
        }
        let body: Arc<[u8]> = upstream.body.into();
        // (10) store
        if cacheable {
            self.cache.store(
                &key,
                body.clone(),
                &upstream.content_type,
                ttl,
                touched_sets(&query, &self.model),
            );
        }
        // (11) respond
        let mut headers = cache_headers("miss");
        headers.extend(warning_headers);
        GatewayResponse {
            status: upstream.status,
            content_type: upstream.content_type,
            headers,
            body,
        }
    }

    /// Handles POST/PUT/PATCH/DELETE. The target set is invalidated whenever
    /// the set exists, whatever the backend answers.
    pub async fn handle_write(&self, method: WriteMethod, set: &str, id: Option<&str>, body: &[u8]) -> GatewayResponse {
        Metrics::inc(&self.metrics.writes);
        let mut trace = self.new_trace(method.as_str(), set, id.unwrap_or(""));
        if self.model.entity_set(set).is_none() {
            let resp = GatewayResponse::error(404, "UnknownEntitySet", format!("unknown entity set `{set}`"));
            return self.finish(trace, resp);
        }
        Metrics::inc(&self.metrics.backend_writes);
        let started = Instant::now();
        let result = self.backend.write(method, set, id, body).await;
        trace.upstream_latency_ms = Some(started.elapsed().as_secs_f64() * 1000.0);
        if self.features.cache {
            let n = self.cache.invalidate_entity_set(set);
            self.metrics.invalidations.fetch_add(n as u64, Ordering::SeqCst);
        }
        let resp = match result {
            Ok(r) => {
                trace.decision = Decision::Forwarded;
                GatewayResponse {
                    status: r.status,
                    content_type: r.content_type,
                    headers: Vec::new(),
                    body: r.body.into(),
                }
            }
            Err(e) => GatewayResponse::error(502, "UpstreamFailure", e.to_string()),
        };
        self.finish(trace, resp)
    }

    pub fn stats_summary(&self) -> Value {
        let stats = self.stats.load();
        let sets: serde_json::Map<String, Value> = stats
            .entity_sets
            .iter()
            .map(|(name, s)| {
                let relations: serde_json::Map<String, Value> = s
                    .relations
                    .iter()
                    .map(|(r, rs)| {
                        (
                            r.clone(),
                            json!({"target": rs.target, "cardinality": rs.cardinality_class, "avgCardinality": rs.avg_cardinality}),
                        )
                    })
                    .collect();
                (
                    name.clone(),
                    json!({
                        "rowCount": s.row_count,
                        "columns": s.columns.keys().collect::<Vec<_>>(),
                        "relations": relations,
                    }),
                )
            })
            .collect();
        json!({"version": self.stats_version.load(Ordering::SeqCst), "entitySets": sets})
    }

    pub fn queries_json(&self) -> Value {
        json!({"version": self.registry.version(), "queries": self.registry.definitions()})
    }

    pub fn metrics_json(&self) -> Value {
        let mut v = serde_json::to_value(self.metrics.snapshot()).expect("metrics serialize");
        v["cache"] = serde_json::to_value(self.cache.counters()).expect("counters serialize");
        v
    }
}

fn invalid_query(e: &QueryError) -> GatewayResponse {
    let mut err = json!({"code": "InvalidQuery", "message": e.to_string()});
    if let Some(p) = e.position() {
        err["position"] = json!(p);
    }
    GatewayResponse::json(400, &json!({ "error": err }))
}

fn named_error(e: NamedQueryError) -> GatewayResponse {
    match &e {
        NamedQueryError::UnknownNamedQuery(_) => GatewayResponse::error(404, "UnknownNamedQuery", e.to_string()),
        NamedQueryError::MissingParameter(_) => GatewayResponse::error(400, "MissingParameter", e.to_string()),
        NamedQueryError::UnexpectedParameter(_) => GatewayResponse::error(400, "UnexpectedParameter", e.to_string()),
        NamedQueryError::Query(q) => invalid_query(q),
        _ => GatewayResponse::error(400, "InvalidQuery", e.to_string()),
    }
}
