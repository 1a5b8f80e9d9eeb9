//! `key = value` configuration with `LIQUIDREC_*` environment overrides.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use liquidrec_core::model::CategorySet;
use liquidrec_core::recommend::Delta;
use liquidrec_core::store::{StoreConfig, DEFAULT_SNAPSHOT_EVERY};
use liquidrec_core::viscous::{Alpha, Engine};

pub const ENV_PREFIX: &str = "LIQUIDREC_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {reason}")]
    BadValue { key: String, reason: String },
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub alpha: Alpha,
    pub delta: Delta,
    pub engine: Engine,
    pub recompute_interval: Duration,
    pub categories: CategorySet,
    pub events_path: PathBuf,
    pub friendship_path: Option<PathBuf>,
    pub catalog_path: Option<PathBuf>,
    pub catalog_strict: bool,
    /// Where published epochs are written; `None` keeps them in memory only.
    pub epochs_dir: Option<PathBuf>,
    pub cache_capacity: usize,
    pub snapshot_every: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            alpha: Alpha::DEFAULT,
            delta: Delta::DEFAULT,
            engine: Engine::Exact,
            recompute_interval: Duration::from_secs(300),
            categories: CategorySet::default(),
            events_path: PathBuf::from("data/events.jsonl"),
            friendship_path: None,
            catalog_path: None,
            catalog_strict: false,
            epochs_dir: None,
            cache_capacity: 10_000,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        }
    }
}

impl ServiceConfig {
    /// Defaults for a data directory laid out like the CLI writes it.
    pub fn for_data_dir(dir: &Path) -> Self {
        let store = StoreConfig::in_dir(dir);
        ServiceConfig {
            events_path: store.events_path,
            friendship_path: store.friendship_path,
            catalog_path: store.catalog_path,
            epochs_dir: Some(dir.join("epochs")),
            ..ServiceConfig::default()
        }
    }

    /// Reads `path`, then applies overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        config.apply_env(std::env::vars())?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = ServiceConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Applies every `LIQUIDREC_<KEY>` variable, `KEY` being a config key in
    /// upper case.
    pub fn apply_env(
        &mut self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        let overrides: HashMap<String, String> = vars
            .into_iter()
            .filter_map(|(k, v)| Some((k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase(), v)))
            .collect();
        let mut keys: Vec<&String> = overrides.keys().collect();
        keys.sort();
        for key in keys {
            self.set(key, overrides[key].trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: String| ConfigError::BadValue {
            key: key.to_string(),
            reason,
        };
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "listen" => self.listen = value.parse().map_err(|e| bad(format!("{e}")))?,
            "alpha" => {
                let a: f64 = value.parse().map_err(|e| bad(format!("{e}")))?;
                self.alpha = Alpha::new(a).map_err(|e| bad(e.to_string()))?;
            }
            "delta" => {
                let d: f64 = value.parse().map_err(|e| bad(format!("{e}")))?;
                self.delta = Delta::new(d).map_err(|e| bad(e.to_string()))?;
            }
            "engine" => self.engine = value.parse().map_err(bad)?,
            "recompute_interval_secs" => {
                let secs: u64 = value.parse().map_err(|e| bad(format!("{e}")))?;
                if secs == 0 {
                    return Err(bad("must be positive".into()));
                }
                self.recompute_interval = Duration::from_secs(secs);
            }
            "categories" => {
                self.categories = CategorySet::new(value.split(',').map(str::trim))
                    .map_err(|e| bad(e.to_string()))?;
            }
            "events_path" => {
                self.events_path = path(value).ok_or_else(|| bad("must not be empty".into()))?
            }
            "friendship_path" => self.friendship_path = path(value),
            "catalog_path" => self.catalog_path = path(value),
            "catalog_strict" => {
                self.catalog_strict = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "epochs_dir" => self.epochs_dir = path(value),
            "cache_capacity" => {
                self.cache_capacity = value.parse().map_err(|e| bad(format!("{e}")))?;
                if self.cache_capacity == 0 {
                    return Err(bad("must be positive".into()));
                }
            }
            "snapshot_every" => {
                self.snapshot_every = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            events_path: self.events_path.clone(),
            friendship_path: self.friendship_path.clone(),
            catalog_path: self.catalog_path.clone(),
            strict_catalog: self.catalog_strict,
            categories: self.categories.clone(),
            snapshot_every: self.snapshot_every,
        }
    }
}
