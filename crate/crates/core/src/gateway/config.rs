use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cache::CachePolicy;
use crate::cost::CostConfig;

pub const CONFIG_ENV: &str = "ODATAX_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendConfig {
    /// Forward to an upstream OData v4 service.
    Proxy { url: String },
    /// Serve from the in-memory store.
    Mock(MockSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockSource {
    /// One `<Set>.json` file per entity set.
    Data(Vec<PathBuf>),
    /// A bundled generated dataset.
    Generate { dataset: String, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", default)]
pub struct Features {
    pub simplified_syntax: bool,
    pub named_queries: bool,
    pub cost_check: bool,
    pub cache: bool,
}

impl Default for Features {
    fn default() -> Self {
        Self::all()
    }
}

impl Features {
    pub fn all() -> Self {
        Self {
            simplified_syntax: true,
            named_queries: true,
            cost_check: true,
            cache: true,
        }
    }

    pub fn none() -> Self {
        Self {
            simplified_syntax: false,
            named_queries: false,
            cost_check: false,
            cache: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    RebuildOnStart,
    File(PathBuf),
    /// No statistics: every estimate uses the default selectivities.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSink {
    Off,
    Stderr,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub backend: BackendConfig,
    /// Required in proxy mode and for mock data files; generated datasets
    /// bring their own model.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub features: Features,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub cache: CachePolicy,
    #[serde(default)]
    pub named_queries: Option<PathBuf>,
    /// Defaults to rebuilding in mock mode and to no statistics in proxy mode.
    #[serde(default)]
    pub stats: Option<StatsSource>,
    #[serde(default = "default_trace")]
    pub trace: TraceSink,
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:8080".parse().unwrap()
}

fn default_trace() -> TraceSink {
    TraceSink::Off
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl GatewayConfig {
    /// Mock gateway over a generated dataset with every feature on.
    pub fn mock_generated(dataset: &str, seed: u64) -> Self {
        Self {
            listen: default_listen(),
            backend: BackendConfig::Mock(MockSource::Generate {
                dataset: dataset.to_string(),
                seed,
            }),
            model: None,
            features: Features::all(),
            cost: CostConfig::default(),
            cache: CachePolicy::default(),
            named_queries: None,
            stats: None,
            trace: TraceSink::Off,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, or the file named by `ODATAX_CONFIG` when set. Relative
    /// paths inside the file are resolved against the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let path = env
            .or_else(|| path.map(Path::to_path_buf))
            .ok_or_else(|| ConfigError::Invalid(format!("no config file given and {CONFIG_ENV} is unset")))?;
        let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_json_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative(dir);
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(m) = &mut self.model {
            fix(m);
        }
        if let Some(n) = &mut self.named_queries {
            fix(n);
        }
        if let Some(StatsSource::File(p)) = &mut self.stats {
            fix(p);
        }
        if let TraceSink::File(p) = &mut self.trace {
            fix(p);
        }
        if let BackendConfig::Mock(MockSource::Data(files)) = &mut self.backend {
            files.iter_mut().for_each(fix);
        }
    }

    pub fn stats_source(&self) -> StatsSource {
        match (&self.stats, &self.backend) {
            (Some(s), _) => s.clone(),
            (None, BackendConfig::Mock(_)) => StatsSource::RebuildOnStart,
            (None, BackendConfig::Proxy { .. }) => StatsSource::None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.cost.threshold > 0.0) {
            return bad("cost.threshold must be positive");
        }
        let w = &self.cost.weights;
        if [w.w_filter, w.w_expand, w.w_size].iter().any(|x| *x < 0.0) {
            return bad("cost weights must be non-negative");
        }
        if w.w_filter + w.w_expand + w.w_size <= 0.0 {
            return bad("at least one cost weight must be positive");
        }
        if !(w.rows_per_cost_unit > 0.0) {
            return bad("cost.weights.rows_per_cost_unit must be positive");
        }
        if self.cache.default_ttl_seconds == 0 {
            return bad("cache.default_ttl_seconds must be positive");
        }
        match &self.backend {
            BackendConfig::Proxy { url } => {
                if self.model.is_none() {
                    return bad("proxy mode needs `model`");
                }
                if !(url.starts_with("http://") || url.starts_with("https://")) {
                    return bad("backend.proxy.url must be an http(s) URL");
                }
                if self.stats == Some(StatsSource::RebuildOnStart) {
                    return bad("proxy mode cannot rebuild statistics; use a stats file or \"none\"");
                }
            }
            BackendConfig::Mock(MockSource::Data(_)) if self.model.is_none() => {
                return bad("mock data files need `model`");
            }
            BackendConfig::Mock(MockSource::Generate { dataset, .. })
                if !crate::datagen::DATASET_NAMES.contains(&dataset.as_str()) =>
            {
                return bad(&format!("unknown dataset `{dataset}`"));
            }
            BackendConfig::Mock(_) => {}
        }
        Ok(())
    }
}
