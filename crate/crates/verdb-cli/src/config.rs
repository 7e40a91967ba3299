//! TOML configuration with explicit defaults. Flags override file values;
//! file values override defaults. Unknown keys are rejected so a typo
//! cannot silently fall back to a default.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data_dir: Option<PathBuf>,
    listen: Option<String>,
    seal_max_txns: Option<usize>,
    seal_max_ms: Option<u64>,
    batch_verify_size: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Config {
    pub data_dir: PathBuf,
    pub listen: String,
    pub seal_max_txns: usize,
    pub seal_max_ms: u64,
    pub batch_verify_size: usize,
}

impl Default for Config {
    fn default() -> Config {
        Config {
            data_dir: PathBuf::from("./data"),
            listen: "127.0.0.1:7171".to_string(),
            seal_max_txns: 64,
            seal_max_ms: 50,
            batch_verify_size: 128,
        }
    }
}

impl Config {
    /// Defaults, overlaid with `path`'s contents when given. A config file
    /// that is named but unreadable or malformed is a configuration error,
    /// never a silent fallback.
    pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
        let mut config = Config::default();
        let Some(path) = path else {
            return Ok(config);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let file: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(v) = file.data_dir {
            config.data_dir = v;
        }
        if let Some(v) = file.listen {
            config.listen = v;
        }
        if let Some(v) = file.seal_max_txns {
            config.seal_max_txns = v;
        }
        if let Some(v) = file.seal_max_ms {
            config.seal_max_ms = v;
        }
        if let Some(v) = file.batch_verify_size {
            if v == 0 {
                return Err(CliError::Config("batch_verify_size must be positive".into()));
            }
            config.batch_verify_size = v;
        }
        if config.seal_max_txns == 0 {
            return Err(CliError::Config("seal_max_txns must be positive".into()));
        }
        Ok(config)
    }
}
