//! Query-aware response cache.
//!
//! Entries are keyed by [`Query::cache_key`], expire after a per-entry TTL,
//! are evicted least-recently-used at capacity, and are indexed by every
//! entity set they touch so a mutation can drop exactly those entries.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::ast::{ExpandNode, Query};
use crate::model::EntityModel;
use crate::named::QueryHints;

pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

/// Monotonic wall clock measured from construction.
#[derive(Debug, Clone)]
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// Clock that only moves when told to; used by tests and the bench harness.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        self.0.fetch_add(d.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_millis(self.0.load(Ordering::SeqCst))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", default)]
pub struct CachePolicy {
    pub capacity: usize,
    pub default_ttl_seconds: u64,
    pub non_cacheable_sets: BTreeSet<String>,
    /// Filter fields that mark a query as user-specific.
    pub non_cacheable_fields: BTreeSet<String>,
}

impl Default for CachePolicy {
    fn default() -> Self {
        Self {
            capacity: 10_000,
            default_ttl_seconds: 300,
            non_cacheable_sets: BTreeSet::new(),
            non_cacheable_fields: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub key: String,
    pub body: Arc<[u8]>,
    pub content_type: String,
    pub stored_at: Duration,
    pub ttl_seconds: u64,
    pub touched_sets: BTreeSet<String>,
}

impl CacheEntry {
    fn expired(&self, now: Duration) -> bool {
        self.stored_at + Duration::from_secs(self.ttl_seconds) <= now
    }
}

fn expand_sets(model: &EntityModel, set: &str, nodes: &[ExpandNode], out: &mut BTreeSet<String>) {
    let Some(def) = model.entity_set(set) else { return };
    for n in nodes {
        if let Some(rel) = def.relation(&n.relation) {
            out.insert(rel.target.clone());
            expand_sets(model, &rel.target, &n.children, out);
        }
    }
}

/// Entity sets whose contents can influence the response to `q`: the primary
/// set, every expand target, and every set crossed by a navigation path in
/// the filter or sort order.
pub fn touched_sets(q: &Query, model: &EntityModel) -> BTreeSet<String> {
    let mut out = BTreeSet::from([q.entity_set.clone()]);
    expand_sets(model, &q.entity_set, &q.expand, &mut out);
    let fields = q
        .filter
        .iter()
        .flat_map(|f| f.fields())
        .chain(q.order_by.iter().map(|k| &k.field));
    for f in fields {
        out.extend(model.path_sets(&q.entity_set, f));
    }
    out
}

pub fn cacheability(q: &Query, hints: Option<&QueryHints>, policy: &CachePolicy, model: &EntityModel) -> bool {
    if hints.is_some_and(|h| !h.cacheable) {
        return false;
    }
    let mut sets = BTreeSet::from([q.entity_set.clone()]);
    expand_sets(model, &q.entity_set, &q.expand, &mut sets);
    if sets.iter().any(|s| policy.non_cacheable_sets.contains(s)) {
        return false;
    }
    let user_specific = q.filter.iter().flat_map(|f| f.fields()).any(|f| {
        policy.non_cacheable_fields.contains(f.property())
            || policy.non_cacheable_fields.contains(&f.to_string())
    });
    !user_specific
}

/// ODataX cache headers in wire order.
pub fn response_headers(cacheable: bool, key: &str, ttl_seconds: u64) -> Vec<(&'static str, String)> {
    if cacheable {
        vec![
            ("X-ODataX-Cacheable", "true".into()),
            ("X-ODataX-Cache-Key", key.to_string()),
            ("Cache-Control", format!("max-age={ttl_seconds}")),
            ("Vary", "Accept, Accept-Language".into()),
        ]
    } else {
        vec![
            ("X-ODataX-Cacheable", "false".into()),
            ("Cache-Control", "no-store".into()),
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CacheCounters {
    pub hits: u64,
    pub misses: u64,
    pub stores: u64,
    pub evictions: u64,
    pub expirations: u64,
    pub invalidated: u64,
    pub entries: usize,
}

#[derive(Default)]
struct Inner {
    entries: HashMap<String, (Arc<CacheEntry>, u64)>,
    lru: BTreeMap<u64, String>,
    by_set: HashMap<String, HashSet<String>>,
    tick: u64,
    counters: CacheCounters,
}

impl Inner {
    fn remove(&mut self, key: &str) -> Option<Arc<CacheEntry>> {
        let (entry, tick) = self.entries.remove(key)?;
        self.lru.remove(&tick);
        for set in &entry.touched_sets {
            if let Some(keys) = self.by_set.get_mut(set) {
                keys.remove(key);
                if keys.is_empty() {
                    self.by_set.remove(set);
                }
            }
        }
        Some(entry)
    }

    fn touch(&mut self, key: &str) {
        self.tick += 1;
        let tick = self.tick;
        if let Some((_, t)) = self.entries.get_mut(key) {
            self.lru.remove(t);
            *t = tick;
            self.lru.insert(tick, key.to_string());
        }
    }
}

/// In-memory LRU cache. All operations take one lock, so each is atomic with
/// respect to the others.
pub struct QueryCache {
    inner: Mutex<Inner>,
    capacity: usize,
    clock: Arc<dyn Clock>,
}

impl QueryCache {
    pub fn new(capacity: usize, clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: Mutex::new(Inner::default()),
            capacity: capacity.max(1),
            clock,
        }
    }

    pub fn with_system_clock(capacity: usize) -> Self {
        Self::new(capacity, Arc::new(SystemClock::new()))
    }

    pub fn lookup(&self, key: &str) -> Option<Arc<CacheEntry>> {
        let now = self.clock.now();
        let mut inner = self.inner.lock();
        let found = inner.entries.get(key).map(|(e, _)| e.clone());
        match found {
            Some(e) if !e.expired(now) => {
                inner.touch(key);
                inner.counters.hits += 1;
                Some(e)
            }
            Some(_) => {
                inner.remove(key);
                inner.counters.expirations += 1;
                inner.counters.misses += 1;
                None
            }
            None => {
                inner.counters.misses += 1;
                None
            }
        }
    }

    /// Looks up without touching recency or counters.
    pub fn peek(&self, key: &str) -> Option<Arc<CacheEntry>> {
        let now = self.clock.now();
        let inner = self.inner.lock();
        inner
            .entries
            .get(key)
            .map(|(e, _)| e.clone())
            .filter(|e| !e.expired(now))
    }

    pub fn store(
        &self,
        key: &str,
        body: impl Into<Arc<[u8]>>,
        content_type: &str,
        ttl_seconds: u64,
        touched_sets: BTreeSet<String>,
    ) {
        let entry = Arc::new(CacheEntry {
            key: key.to_string(),
            body: body.into(),
            content_type: content_type.to_string(),
            stored_at: self.clock.now(),
            ttl_seconds,
            touched_sets,
        });
        let mut inner = self.inner.lock();
        inner.remove(key);
        while inner.entries.len() >= self.capacity {
            let Some((_, oldest)) = inner.lru.pop_first() else { break };
            inner.remove(&oldest);
            inner.counters.evictions += 1;
        }
        inner.tick += 1;
        let tick = inner.tick;
        for set in &entry.touched_sets {
            inner.by_set.entry(set.clone()).or_default().insert(key.to_string());
        }
        inner.lru.insert(tick, key.to_string());
        inner.entries.insert(key.to_string(), (entry, tick));
        inner.counters.stores += 1;
    }

    pub fn invalidate_entity_set(&self, set: &str) -> usize {
        let mut inner = self.inner.lock();
        let keys: Vec<String> = inner
            .by_set
            .get(set)
            .map(|k| k.iter().cloned().collect())
            .unwrap_or_default();
        for k in &keys {
            inner.remove(k);
        }
        inner.counters.invalidated += keys.len() as u64;
        keys.len()
    }

    pub fn clear(&self) {
        let mut inner = self.inner.lock();
        let counters = inner.counters;
        *inner = Inner {
            counters,
            ..Default::default()
        };
    }

    pub fn len(&self) -> usize {
        self.inner.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self) -> Vec<String> {
        self.inner.lock().entries.keys().cloned().collect()
    }

    pub fn counters(&self) -> CacheCounters {
        let inner = self.inner.lock();
        CacheCounters {
            entries: inner.entries.len(),
            ..inner.counters
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen;
    use crate::parser::{parse_query_params, traditional::split_options};

    fn sets(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn manual() -> (Arc<ManualClock>, QueryCache) {
        let clock = Arc::new(ManualClock::new());
        let cache = QueryCache::new(100, clock.clone());
        (clock, cache)
    }

    fn query(s: &str) -> Query {
        parse_query_params(&split_options(s), &datagen::ecommerce_model(), "Products").unwrap()
    }

    #[test]
    fn hit_within_ttl_miss_after() {
        let (clock, cache) = manual();
        cache.store("k", b"body".to_vec(), "application/json", 300, sets(&["Products"]));
        assert!(cache.lookup("k").is_some());
        clock.advance(Duration::from_secs(299));
        assert!(cache.lookup("k").is_some());
        clock.advance(Duration::from_secs(1));
        assert!(cache.lookup("k").is_none());
        let c = cache.counters();
        assert_eq!((c.hits, c.misses, c.expirations, c.entries), (2, 1, 1, 0));
    }

    #[test]
    fn commuted_filters_share_an_entry() {
        let (_, cache) = manual();
        let a = query("$filter=Price lt 100 and Category eq 'Books'");
        let b = query("$filter=Category eq 'Books' and Price lt 100");
        cache.store(&a.cache_key(), b"x".to_vec(), "application/json", 300, sets(&["Products"]));
        assert!(cache.lookup(&b.cache_key()).is_some());
    }

    #[test]
    fn invalidation_uses_the_set_index() {
        let (_, cache) = manual();
        cache.store("a", b"1".to_vec(), "t", 300, sets(&["Products", "Reviews"]));
        cache.store("b", b"2".to_vec(), "t", 300, sets(&["Products"]));
        cache.store("c", b"3".to_vec(), "t", 300, sets(&["Users"]));
        assert_eq!(cache.invalidate_entity_set("Reviews"), 1);
        assert!(cache.peek("a").is_none());
        assert_eq!(cache.invalidate_entity_set("Products"), 1);
        assert_eq!(cache.invalidate_entity_set("Nope"), 0);
        assert_eq!(cache.keys(), vec!["c".to_string()]);
    }

    #[test]
    fn last_writer_wins() {
        let (_, cache) = manual();
        cache.store("k", b"old".to_vec(), "t", 300, sets(&["Products"]));
        cache.store("k", b"new".to_vec(), "t", 300, sets(&["Users"]));
        assert_eq!(&*cache.lookup("k").unwrap().body, b"new");
        assert_eq!(cache.invalidate_entity_set("Products"), 0);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn lru_keeps_most_recent() {
        let (_, cache) = manual();
        for i in 0..1000 {
            cache.store(&format!("k{i}"), b"v".to_vec(), "t", 300, sets(&["Products"]));
        }
        assert_eq!(cache.len(), 100);
        for i in 900..1000 {
            assert!(cache.peek(&format!("k{i}")).is_some());
        }
        // A lookup refreshes recency.
        cache.lookup("k900");
        cache.store("fresh", b"v".to_vec(), "t", 300, sets(&["Products"]));
        assert!(cache.peek("k900").is_some());
        assert!(cache.peek("k901").is_none());
    }

    #[test]
    fn cacheability_rules() {
        let model = datagen::ecommerce_model();
        let mut policy = CachePolicy::default();
        let q = query("$filter=Price lt 20 and Category eq 'Books'");
        assert!(cacheability(&q, None, &policy, &model));
        let hints = QueryHints {
            name: "n".into(),
            cacheable: false,
            cost_limit: None,
        };
        assert!(!cacheability(&q, Some(&hints), &policy, &model));
        policy.non_cacheable_fields.insert("Price".into());
        assert!(!cacheability(&q, None, &policy, &model));
        policy.non_cacheable_fields.clear();
        policy.non_cacheable_sets.insert("Reviews".into());
        assert!(cacheability(&q, None, &policy, &model));
        assert!(!cacheability(&query("$expand=Reviews"), None, &policy, &model));
    }

    #[test]
    fn touched_sets_cover_expands_and_paths() {
        let model = datagen::ecommerce_model();
        let q = query("$filter=Supplier/Country eq 'DE'&$expand=Reviews($expand=Author)");
        assert_eq!(touched_sets(&q, &model), sets(&["Products", "Reviews", "Suppliers", "Users"]));
    }

    #[test]
    fn header_blocks() {
        let key = query("$top=1").cache_key();
        let h = response_headers(true, &key, 300);
        let lines: Vec<String> = h.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        assert_eq!(
            lines,
            vec![
                "X-ODataX-Cacheable: true".to_string(),
                format!("X-ODataX-Cache-Key: {key}"),
                "Cache-Control: max-age=300".to_string(),
                "Vary: Accept, Accept-Language".to_string(),
            ]
        );
        assert_eq!(key.len(), 64);
        assert_eq!(
            response_headers(false, &key, 300),
            vec![
                ("X-ODataX-Cacheable", "false".to_string()),
                ("Cache-Control", "no-store".to_string())
            ]
        );
    }
}
