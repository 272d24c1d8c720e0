//! Per-user settings: server, token, workbook and sync options.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:7878";
pub const DEFAULT_AGENT: &str = "http://127.0.0.1:7879";
pub const DEFAULT_INTERVAL_SECS: u64 = 5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserConfig {
    pub server: Option<String>,
    pub token: Option<String>,
    pub workbook: Option<PathBuf>,
    pub interval_secs: Option<u64>,
    pub listen: Option<String>,
}

/// `DISCOM_CONFIG`, else `$XDG_CONFIG_HOME/discom/config.toml`, else
/// `~/.config/discom/config.toml`.
pub fn default_path() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("DISCOM_CONFIG") {
        return Some(p.into());
    }
    let base = std::env::var_os("XDG_CONFIG_HOME")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| Path::new(&h).join(".config")))?;
    Some(base.join("discom").join("config.toml"))
}

impl UserConfig {
    /// Missing files read as empty.
    pub fn load(path: &Path) -> CliResult<Self> {
        match fs::read_to_string(path) {
            Ok(text) => toml::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(CliError::User(format!("{}: {e}", path.display()))),
        }
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let fail = |e: std::io::Error| CliError::User(format!("{}: {e}", path.display()));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(fail)?;
        }
        fs::write(path, toml::to_string(self).expect("config serializes")).map_err(fail)
    }
}
