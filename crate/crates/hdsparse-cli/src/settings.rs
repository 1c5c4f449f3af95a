//! Option lookup across command-line flags, `HDSL_` environment variables and
//! a JSON config file, in that order of precedence.
//!
//! Clap already resolves flags against the environment, so values arriving
//! here as `Some` came from one of those two. Anything still missing is read
//! from the config file: first from the subcommand's own section, then from
//! the top level.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

#[derive(Debug, Default)]
pub struct Layers {
    config: Map<String, Value>,
    section: &'static str,
}

impl Layers {
    pub fn load(path: Option<&Path>, section: &'static str) -> Result<Self, String> {
        let config = match path {
            None => Map::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("reading config {}: {e}", p.display()))?;
                match serde_json::from_str(&text).map_err(|e| format!("parsing config {}: {e}", p.display()))? {
                    Value::Object(m) => m,
                    _ => return Err(format!("config {} must hold a JSON object", p.display())),
                }
            }
        };
        Ok(Self { config, section })
    }

    fn lookup(&self, key: &str) -> Option<&Value> {
        self.config
            .get(self.section)
            .and_then(|s| s.get(key))
            .or_else(|| self.config.get(key))
    }

    /// The flag or environment value if present, else the config value.
    pub fn pick<T: DeserializeOwned>(&self, given: Option<T>, key: &str) -> Result<Option<T>, String> {
        if given.is_some() {
            return Ok(given);
        }
        match self.lookup(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| format!("config key {key:?}: {e}")),
        }
    }

    pub fn or<T: DeserializeOwned>(&self, given: Option<T>, key: &str, default: T) -> Result<T, String> {
        Ok(self.pick(given, key)?.unwrap_or(default))
    }

    /// The whole subcommand section, for commands whose settings form a struct.
    pub fn section(&self) -> Option<&Value> {
        self.config.get(self.section)
    }
}
