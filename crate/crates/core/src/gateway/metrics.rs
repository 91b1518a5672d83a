use std::collections::VecDeque;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::Serialize;

use crate::cost::CostEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheOutcome {
    Hit,
    Miss,
    /// Cache disabled, or the request never reached the lookup.
    Bypass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CostCheck {
    Accepted,
    Rejected,
    /// Skipped because the response came from the cache.
    Bypass,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    ServedCache,
    Forwarded,
    RejectedCost,
    Error,
}

/// One line of the request trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RequestTrace {
    pub request_id: u64,
    pub method: String,
    pub entity_set: String,
    pub raw_params: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub named_query: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostEstimate>,
    pub cost_check: CostCheck,
    pub cache: CacheOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upstream_latency_ms: Option<f64>,
    pub decision: Decision,
    pub status: u16,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Estimated versus observed rows for one forwarded read.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CostObservation {
    pub request_id: u64,
    pub query: String,
    pub estimated_total: f64,
    pub projected_rows: u64,
    pub actual_rows: Option<u64>,
}

const OBSERVATION_LOG: usize = 1000;
const TRACE_RING: usize = 1000;

#[derive(Default)]
pub struct Metrics {
    pub requests: AtomicU64,
    pub reads: AtomicU64,
    pub writes: AtomicU64,
    pub hits: AtomicU64,
    pub misses: AtomicU64,
    pub bypasses: AtomicU64,
    pub rejections: AtomicU64,
    pub errors: AtomicU64,
    pub backend_reads: AtomicU64,
    pub backend_writes: AtomicU64,
    pub invalidations: AtomicU64,
    observations: Mutex<VecDeque<CostObservation>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsSnapshot {
    pub requests: u64,
    pub reads: u64,
    pub writes: u64,
    pub hits: u64,
    pub misses: u64,
    pub bypasses: u64,
    pub hit_rate: f64,
    pub rejections: u64,
    pub errors: u64,
    pub backend_reads: u64,
    pub backend_writes: u64,
    pub invalidated_entries: u64,
    pub estimated_vs_actual: Vec<CostObservation>,
}

fn get(c: &AtomicU64) -> u64 {
    c.load(Ordering::SeqCst)
}

impl Metrics {
    pub fn inc(c: &AtomicU64) {
        c.fetch_add(1, Ordering::SeqCst);
    }

    pub fn observe(&self, o: CostObservation) {
        let mut log = self.observations.lock();
        if log.len() == OBSERVATION_LOG {
            log.pop_front();
        }
        log.push_back(o);
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        let (hits, misses) = (get(&self.hits), get(&self.misses));
        MetricsSnapshot {
            requests: get(&self.requests),
            reads: get(&self.reads),
            writes: get(&self.writes),
            hits,
            misses,
            bypasses: get(&self.bypasses),
            hit_rate: if hits + misses == 0 {
                0.0
            } else {
                hits as f64 / (hits + misses) as f64
            },
            rejections: get(&self.rejections),
            errors: get(&self.errors),
            backend_reads: get(&self.backend_reads),
            backend_writes: get(&self.backend_writes),
            invalidated_entries: get(&self.invalidations),
            estimated_vs_actual: self.observations.lock().iter().cloned().collect(),
        }
    }
}

/// Keeps the most recent traces in memory and optionally writes every trace
/// as one JSON line.
pub struct TraceLog {
    ring: Mutex<VecDeque<RequestTrace>>,
    sink: Option<Mutex<Box<dyn Write + Send>>>,
}

impl TraceLog {
    pub fn new(sink: Option<Box<dyn Write + Send>>) -> Self {
        Self {
            ring: Mutex::new(VecDeque::new()),
            sink: sink.map(Mutex::new),
        }
    }

    pub fn record(&self, trace: RequestTrace) {
        if let Some(sink) = &self.sink {
            let line = serde_json::to_string(&trace).expect("trace serializes");
            let mut w = sink.lock();
            if writeln!(w, "{line}").and_then(|_| w.flush()).is_err() {
                tracing::warn!("trace sink write failed");
            }
        }
        let mut ring = self.ring.lock();
        if ring.len() == TRACE_RING {
            ring.pop_front();
        }
        ring.push_back(trace);
    }

    pub fn recent(&self) -> Vec<RequestTrace> {
        self.ring.lock().iter().cloned().collect()
    }

    pub fn last(&self) -> Option<RequestTrace> {
        self.ring.lock().back().cloned()
    }
}
