//! Merges command-line flags with an optional JSON config file.
//!
//! The config file is a flat JSON object. Keys may be written with dashes, as
//! on the command line, or with underscores. A flag given on the command line
//! always wins over the file.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    file: Map<String, Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(file)) => Ok(Settings { file }),
            Ok(_) => Err(CliError::Usage("config file must hold a JSON object".into())),
            Err(e) => Err(CliError::Usage(format!("config {}: {e}", path.display()))),
        }
    }

    fn lookup<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        let value = self
            .file
            .get(key)
            .or_else(|| self.file.get(&key.replace('-', "_")));
        value
            .map(|v| {
                serde_json::from_value(v.clone())
                    .map_err(|e| CliError::Usage(format!("config key {key}: {e}")))
            })
            .transpose()
    }

    pub fn get<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.optional(flag, key)?.unwrap_or(default))
    }

    pub fn optional<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.lookup(key),
        }
    }

    pub fn required<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        self.optional(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("--{key} is required")))
    }

    /// Switches: set when the flag is present or the file says `true`.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.lookup(key)?.unwrap_or(false))
    }
}
