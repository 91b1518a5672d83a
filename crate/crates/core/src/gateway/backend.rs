use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwap;
use async_trait::async_trait;
use parking_lot::Mutex;
use serde_json::{json, Value};

use crate::evaluator::{evaluate, results_to_json};
use crate::parser::parse_query_params;
use crate::store::{EntityStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteMethod {
    Post,
    Put,
    Patch,
    Delete,
}

impl WriteMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            WriteMethod::Post => "POST",
            WriteMethod::Put => "PUT",
            WriteMethod::Patch => "PATCH",
            WriteMethod::Delete => "DELETE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl BackendResponse {
    pub fn json(status: u16, body: &Value) -> Self {
        Self {
            status,
            content_type: "application/json".into(),
            body: body.to_string().into_bytes(),
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("upstream failure: {0}")]
pub struct BackendError(pub String);

/// An OData v4 service that receives plain `$`-option query strings.
#[async_trait]
pub trait Backend: Send + Sync {
    /// `query` is the URL-encoded option string, without a leading `?`.
    async fn read(&self, set: &str, query: &str) -> Result<BackendResponse, BackendError>;

    async fn write(
        &self,
        method: WriteMethod,
        set: &str,
        id: Option<&str>,
        body: &[u8],
    ) -> Result<BackendResponse, BackendError>;

    /// Current data, when the backend holds it in memory.
    fn store(&self) -> Option<Arc<EntityStore>> {
        None
    }
}

fn error_body(status: u16, code: &str, message: impl Into<String>) -> BackendResponse {
    BackendResponse::json(status, &json!({"error": {"code": code, "message": message.into()}}))
}

/// In-memory OData service over an [`EntityStore`]. It parses the forwarded
/// option string itself, exactly as an upstream service would.
pub struct MockBackend {
    store: ArcSwap<EntityStore>,
    writer: Mutex<()>,
    reads: AtomicU64,
    writes: AtomicU64,
    /// Received option strings, most recent last, when recording is on.
    log: Mutex<Option<Vec<String>>>,
}

impl MockBackend {
    pub fn new(store: EntityStore) -> Self {
        Self {
            store: ArcSwap::from_pointee(store),
            writer: Mutex::new(()),
            reads: AtomicU64::new(0),
            writes: AtomicU64::new(0),
            log: Mutex::new(None),
        }
    }

    pub fn read_calls(&self) -> u64 {
        self.reads.load(Ordering::SeqCst)
    }

    pub fn write_calls(&self) -> u64 {
        self.writes.load(Ordering::SeqCst)
    }

    pub fn record_queries(&self) {
        *self.log.lock() = Some(Vec::new());
    }

    pub fn recorded_queries(&self) -> Vec<String> {
        self.log.lock().clone().unwrap_or_default()
    }

    fn apply(&self, method: WriteMethod, set: &str, id: Option<&str>, body: &[u8]) -> BackendResponse {
        let _guard = self.writer.lock();
        let current = self.store.load_full();
        let Some(def) = current.model().entity_set(set) else {
            return error_body(404, "UnknownEntitySet", format!("unknown entity set `{set}`"));
        };
        let id = match id.map(str::parse::<i64>) {
            None => None,
            Some(Ok(id)) => Some(id),
            Some(Err(_)) => return error_body(400, "InvalidKey", "entity key must be an integer"),
        };
        let record = || -> Result<Value, BackendResponse> {
            serde_json::from_slice(body).map_err(|e| error_body(400, "InvalidBody", e.to_string()))
        };
        let result = match (method, id) {
            (WriteMethod::Post, None) => match record() {
                Ok(r) => current
                    .insert(set, &r)
                    .map(|(s, e)| (s, 201, Some(crate::store::entity_to_json(def, &e)))),
                Err(resp) => return resp,
            },
            (WriteMethod::Put | WriteMethod::Patch, Some(id)) => match record() {
                Ok(r) => current
                    .update(set, id, &r, method == WriteMethod::Patch)
                    .map(|(s, e)| (s, 200, Some(crate::store::entity_to_json(def, &e)))),
                Err(resp) => return resp,
            },
            (WriteMethod::Delete, Some(id)) => current.delete(set, id).map(|s| (s, 204, None)),
            _ => {
                return error_body(
                    405,
                    "MethodNotAllowed",
                    format!("{} needs {}", method.as_str(), if id.is_some() { "no key" } else { "a key" }),
                )
            }
        };
        match result {
            Ok((next, status, body)) => {
                self.store.store(Arc::new(next));
                match body {
                    Some(b) => BackendResponse::json(status, &b),
                    None => BackendResponse {
                        status,
                        content_type: "application/json".into(),
                        body: Vec::new(),
                    },
                }
            }
            Err(StoreError::NotFound { set, id }) => error_body(404, "NotFound", format!("`{set}` has no entity {id}")),
            Err(e) => error_body(400, "InvalidEntity", e.to_string()),
        }
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn read(&self, set: &str, query: &str) -> Result<BackendResponse, BackendError> {
        self.reads.fetch_add(1, Ordering::SeqCst);
        if let Some(log) = self.log.lock().as_mut() {
            log.push(query.to_string());
        }
        let store = self.store.load_full();
        let params: Vec<(String, String)> = form_urlencoded::parse(query.as_bytes()).into_owned().collect();
        let q = match parse_query_params(&params, store.model(), set) {
            Ok(q) => q,
            Err(crate::parser::QueryError::UnknownEntitySet(s)) => {
                return Ok(error_body(404, "UnknownEntitySet", format!("unknown entity set `{s}`")))
            }
            Err(e) => return Ok(error_body(400, "InvalidQuery", e.to_string())),
        };
        Ok(match evaluate(&q, &store) {
            Ok(rows) => BackendResponse::json(200, &results_to_json(&rows)),
            Err(e) => error_body(400, "InvalidQuery", e.to_string()),
        })
    }

    async fn write(
        &self,
        method: WriteMethod,
        set: &str,
        id: Option<&str>,
        body: &[u8],
    ) -> Result<BackendResponse, BackendError> {
        self.writes.fetch_add(1, Ordering::SeqCst);
        Ok(self.apply(method, set, id, body))
    }

    fn store(&self) -> Option<Arc<EntityStore>> {
        Some(self.store.load_full())
    }
}

/// Forwards to an upstream OData v4 service without touching bodies.
pub struct ProxyBackend {
    base: String,
    client: reqwest::Client,
}

impl ProxyBackend {
    pub fn new(base_url: &str) -> Self {
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            client: reqwest::Client::new(),
        }
    }

    async fn send(&self, req: reqwest::RequestBuilder) -> Result<BackendResponse, BackendError> {
        let resp = req.send().await.map_err(|e| BackendError(e.to_string()))?;
        let status = resp.status().as_u16();
        let content_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("application/json")
            .to_string();
        let body = resp.bytes().await.map_err(|e| BackendError(e.to_string()))?;
        Ok(BackendResponse {
            status,
            content_type,
            body: body.to_vec(),
        })
    }
}

#[async_trait]
impl Backend for ProxyBackend {
    async fn read(&self, set: &str, query: &str) -> Result<BackendResponse, BackendError> {
        let mut url = format!("{}/{}", self.base, set);
        if !query.is_empty() {
            url.push('?');
            url.push_str(query);
        }
        self.send(self.client.get(url)).await
    }

    async fn write(
        &self,
        method: WriteMethod,
        set: &str,
        id: Option<&str>,
        body: &[u8],
    ) -> Result<BackendResponse, BackendError> {
        let url = match id {
            Some(id) => format!("{}/{}/{}", self.base, set, id),
            None => format!("{}/{}", self.base, set),
        };
        let m = match method {
            WriteMethod::Post => reqwest::Method::POST,
            WriteMethod::Put => reqwest::Method::PUT,
            WriteMethod::Patch => reqwest::Method::PATCH,
            WriteMethod::Delete => reqwest::Method::DELETE,
        };
        let req = self
            .client
            .request(m, url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        self.send(req).await
    }
}
