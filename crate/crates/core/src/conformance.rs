//! Golden-corpus runner. Each case goes through a mock-mode gateway and is
//! checked against its expected forwarding, headers, result ids and errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cache::ManualClock;
use crate::gateway::{BackendConfig, Gateway, GatewayConfig, MockBackend, MockSource};
use crate::named::example_definitions;
use crate::parser::simplified::{scan_conditions, SimplifiedOp};
use crate::parser::traditional::split_options;
use crate::parser::parse_query_params;
use crate::stats::StatisticsCatalog;
use crate::store::load_dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GoldenCase {
    pub name: String,
    pub entity_set: String,
    /// Options as typed, before percent-encoding.
    pub params: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_traditional: Option<String>,
    /// Whether the response carries `X-ODataX-Cache-Key`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_key: Option<bool>,
    /// Entity ids in response order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_ids: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_status: Option<u16>,
    /// Exact response body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_body: Option<Value>,
    /// Statistics file for this case, relative to the corpus file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub diffs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConformanceReport {
    pub cases: usize,
    pub passed: usize,
    pub failed: usize,
    pub results: Vec<CaseResult>,
}

impl ConformanceReport {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConformanceError {
    #[error("cannot read corpus {path}: {reason}")]
    Corpus { path: String, reason: String },
    #[error("conformance runs need a mock backend")]
    NotMock,
    #[error("cannot load data: {0}")]
    Data(String),
}

pub fn load_corpus(path: &Path) -> Result<Vec<GoldenCase>, ConformanceError> {
    let err = |reason: String| ConformanceError::Corpus {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

/// Mock gateway for `cfg` with the example named queries registered and
/// backend query recording on.
pub fn conformance_gateway(cfg: &GatewayConfig) -> Result<(Gateway, Arc<MockBackend>), ConformanceError> {
    let store = match &cfg.backend {
        BackendConfig::Proxy { .. } => return Err(ConformanceError::NotMock),
        BackendConfig::Mock(MockSource::Generate { dataset, seed }) => crate::datagen::by_name(dataset, *seed)
            .ok_or_else(|| ConformanceError::Data(format!("unknown dataset `{dataset}`")))?
            .into_store()
            .map_err(|e| ConformanceError::Data(e.to_string()))?,
        BackendConfig::Mock(MockSource::Data(files)) => {
            let model = cfg.model.as_ref().ok_or(ConformanceError::Data("model path missing".into()))?;
            load_dataset(model, files).map_err(|e| ConformanceError::Data(e.to_string()))?
        }
    };
    let (gw, backend) = Gateway::mock(cfg, store, Arc::new(ManualClock::new()));
    for def in example_definitions() {
        let _ = gw.registry().register(def);
    }
    backend.record_queries();
    Ok((gw, backend))
}

pub async fn run_conformance(corpus: &Path, cfg: &GatewayConfig) -> Result<ConformanceReport, ConformanceError> {
    let cases = load_corpus(corpus)?;
    let (gw, backend) = conformance_gateway(cfg)?;
    let dir = corpus.parent().unwrap_or(Path::new("."));
    Ok(run_cases(&gw, &backend, &cases, dir).await)
}

/// Percent-encodes typed options the way a browser would.
pub fn encode_params(raw: &str) -> String {
    form_urlencoded::Serializer::new(String::new())
        .extend_pairs(split_options(raw))
        .finish()
}

pub async fn run_cases(gw: &Gateway, backend: &MockBackend, cases: &[GoldenCase], dir: &Path) -> ConformanceReport {
    let mut results = Vec::with_capacity(cases.len());
    for case in cases {
        results.push(run_case(gw, backend, case, dir).await);
    }
    let passed = results.iter().filter(|r| r.passed).count();
    ConformanceReport {
        cases: results.len(),
        passed,
        failed: results.len() - passed,
        results,
    }
}

async fn run_case(gw: &Gateway, backend: &MockBackend, case: &GoldenCase, dir: &Path) -> CaseResult {
    let mut diffs = Vec::new();
    let saved = match &case.stats {
        Some(p) => match StatisticsCatalog::load(dir.join(p)) {
            Ok(s) => {
                let prev = gw.stats();
                gw.set_stats(s);
                Some(prev)
            }
            Err(e) => {
                return CaseResult {
                    name: case.name.clone(),
                    passed: false,
                    diffs: vec![format!("stats: {e}")],
                }
            }
        },
        None => None,
    };
    gw.cache().clear();
    let forwarded_before = backend.recorded_queries().len();
    let resp = gw.handle_read(&case.entity_set, &encode_params(&case.params)).await;
    if let Some(prev) = saved {
        gw.set_stats((*prev).clone());
    }
    let trace = gw.last_trace();
    let body = resp.body_json();

    let mut expect = |what: &str, expected: String, got: String| {
        if expected != got {
            diffs.push(format!("{what}:\n  - {expected}\n  + {got}"));
        }
    };
    let status = resp.status;
    let want_status = case
        .expected_status
        .unwrap_or(if case.expected_error.is_some() { 400 } else { 200 });
    expect("status", want_status.to_string(), status.to_string());
    if let Some(code) = &case.expected_error {
        let got = body
            .as_ref()
            .and_then(|b| b["error"]["code"].as_str().map(str::to_string))
            .unwrap_or_default();
        expect("error code", code.clone(), got);
    }
    if let Some(want) = &case.expected_body {
        let got = body.clone().unwrap_or(Value::Null);
        expect("body", want.to_string(), got.to_string());
    }
    if let Some(want) = &case.expected_traditional {
        let got = trace.as_ref().and_then(|t| t.query.clone()).unwrap_or_default();
        expect("traditional", want.clone(), got);
    }
    if let Some(want) = case.cache_key {
        expect(
            "cache key header",
            want.to_string(),
            resp.header("X-ODataX-Cache-Key").is_some().to_string(),
        );
    }
    if let Some(want) = &case.expected_ids {
        let got: Vec<i64> = body
            .as_ref()
            .and_then(|b| b["value"].as_array().cloned())
            .unwrap_or_default()
            .iter()
            .filter_map(|r| r["Id"].as_i64())
            .collect();
        expect("ids", format!("{want:?}"), format!("{got:?}"));
    }
    // Whatever was forwarded must mean the same query the gateway resolved.
    let forwarded = backend.recorded_queries();
    if status == 200 && forwarded.len() > forwarded_before {
        let reparse = |s: &str| {
            let params: Vec<(String, String)> = form_urlencoded::parse(s.as_bytes()).into_owned().collect();
            parse_query_params(&params, gw.model(), &case.entity_set)
        };
        let resolved = trace.as_ref().and_then(|t| t.query.clone()).unwrap_or_default();
        match (reparse(forwarded.last().unwrap()), reparse(&encode_params(&resolved))) {
            (Ok(sent), Ok(resolved)) => {
                expect("forwarded canonical key", resolved.cache_key(), sent.cache_key());
            }
            (Err(e), _) | (_, Err(e)) => diffs.push(format!("forwarded query does not parse: {e}")),
        }
    }
    CaseResult {
        name: case.name.clone(),
        passed: diffs.is_empty(),
        diffs,
    }
}

/// Operator mappings of the simplified syntax a corpus should exercise.
pub const MAPPINGS: [&str; 12] = [
    ">", "<", ">=", "<=", "=", "!=", ":", "comma-and", "sort-desc", "sort-asc", "select", "merge",
];

/// How often each simplified mapping occurs across the corpus.
pub fn coverage(cases: &[GoldenCase]) -> BTreeMap<&'static str, usize> {
    let mut counts: BTreeMap<&'static str, usize> = MAPPINGS.iter().map(|m| (*m, 0)).collect();
    for case in cases {
        let params = split_options(&case.params);
        let has_dollar = params.iter().any(|(k, _)| k.starts_with('$'));
        let mut simplified = false;
        for (k, v) in &params {
            match k.as_str() {
                "filter" => {
                    simplified = true;
                    if let Ok(conds) = scan_conditions(v) {
                        if conds.len() > 1 {
                            *counts.get_mut("comma-and").unwrap() += 1;
                        }
                        for c in conds {
                            let sym = match c.op {
                                SimplifiedOp::Colon => ":",
                                op => MAPPINGS.iter().copied().find(|m| *m == op.symbol()).unwrap(),
                            };
                            *counts.get_mut(sym).unwrap() += 1;
                        }
                    }
                }
                "sort" => {
                    simplified = true;
                    for key in v.split(',') {
                        let m = if key.trim().starts_with('-') { "sort-desc" } else { "sort-asc" };
                        *counts.get_mut(m).unwrap() += 1;
                    }
                }
                "select" => {
                    simplified = true;
                    *counts.get_mut("select").unwrap() += 1;
                }
                "top" | "skip" => simplified = true,
                _ => {}
            }
        }
        if simplified && has_dollar {
            *counts.get_mut("merge").unwrap() += 1;
        }
    }
    counts
}

pub fn missing_coverage(cases: &[GoldenCase]) -> Vec<&'static str> {
    coverage(cases)
        .into_iter()
        .filter(|(_, n)| *n == 0)
        .map(|(m, _)| m)
        .collect()
}
