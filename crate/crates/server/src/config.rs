//! Server settings. Precedence: built-in defaults, then the config file,
//! then `DISCOM_*` environment variables, then command-line flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("environment variable {name}: {message}")]
    Env { name: &'static str, message: String },
}

/// One layer of settings; unset fields fall through to the layer below.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigLayer {
    pub data_dir: Option<PathBuf>,
    pub listen: Option<String>,
    pub sweep_interval_secs: Option<u64>,
    pub workers: Option<usize>,
    pub admin_token: Option<String>,
}

impl ConfigLayer {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn from_env(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        fn number<T: std::str::FromStr>(name: &'static str, v: Option<String>) -> Result<Option<T>, ConfigError> {
            v.map(|s| {
                s.trim().parse().map_err(|_| ConfigError::Env {
                    name,
                    message: format!("`{s}` is not a number"),
                })
            })
            .transpose()
        }
        Ok(Self {
            data_dir: get("DISCOM_DATA_DIR").map(PathBuf::from),
            listen: get("DISCOM_LISTEN"),
            sweep_interval_secs: number("DISCOM_SWEEP_SECS", get("DISCOM_SWEEP_SECS"))?,
            workers: number("DISCOM_WORKERS", get("DISCOM_WORKERS"))?,
            admin_token: get("DISCOM_ADMIN_TOKEN"),
        })
    }

    /// `self` with every unset field taken from `lower`.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            data_dir: self.data_dir.or(lower.data_dir),
            listen: self.listen.or(lower.listen),
            sweep_interval_secs: self.sweep_interval_secs.or(lower.sweep_interval_secs),
            workers: self.workers.or(lower.workers),
            admin_token: self.admin_token.or(lower.admin_token),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub listen: String,
    pub sweep_interval: Duration,
    pub workers: usize,
    /// Bearer token for the admin endpoints; they are disabled when unset.
    pub admin_token: Option<String>,
}

impl ServerConfig {
    pub fn resolve(
        file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        flags: ConfigLayer,
    ) -> Result<Self, ConfigError> {
        let file = match file {
            Some(p) => ConfigLayer::from_file(p)?,
            None => ConfigLayer::default(),
        };
        let merged = flags.over(ConfigLayer::from_env(env)?.over(file));
        Ok(Self {
            data_dir: merged.data_dir.unwrap_or_else(|| PathBuf::from("discom-data")),
            listen: merged.listen.unwrap_or_else(|| "127.0.0.1:7878".into()),
            sweep_interval: Duration::from_secs(merged.sweep_interval_secs.unwrap_or(60).max(1)),
            workers: merged.workers.unwrap_or(4).max(1),
            admin_token: merged.admin_token.filter(|t| !t.is_empty()),
        })
    }
}
