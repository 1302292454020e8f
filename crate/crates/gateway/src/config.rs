//! Deployment configuration, read from a TOML file. Every field is optional:
//!
//! ```toml
//! store_root = "abase-store"                 # created if missing
//! storage_url_prefix = "file:///srv/grid/"   # default: <store_root>/storage as a file URL
//! listen = "127.0.0.1:8080"
//! default_seed = 42                          # resource pools for analyses
//! log_level = "info"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use analysis_base::{Error, Result, StorageUrls};
use serde::{Deserialize, Serialize};

pub const DEFAULT_STORE_ROOT: &str = "abase-store";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_LOG_LEVEL: &str = "info";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store_root: PathBuf,
    pub storage_url_prefix: Option<String>,
    pub listen: String,
    pub default_seed: u64,
    pub log_level: String,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            store_root: PathBuf::from(DEFAULT_STORE_ROOT),
            storage_url_prefix: None,
            listen: DEFAULT_LISTEN.to_owned(),
            default_seed: DEFAULT_SEED,
            log_level: DEFAULT_LOG_LEVEL.to_owned(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("bad configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    /// Creates the store root if needed and resolves the storage prefix. A default
    /// prefix points at `<store_root>/storage`, which is created as well.
    pub fn prepare(&self) -> Result<StorageUrls> {
        fs::create_dir_all(&self.store_root).map_err(|e| Error::io(&self.store_root, e))?;
        match &self.storage_url_prefix {
            Some(p) => StorageUrls::new(p),
            None => {
                let dir = self.store_root.join("storage");
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let abs = dir.canonicalize().map_err(|e| Error::io(&dir, e))?;
                StorageUrls::for_directory(&abs)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}
