//! Flat `key = value` run configuration files.
//!
//! Lines are `key = value`; blank lines and `#` comments are skipped.
//! Keys must come from the caller's allowlist so typos fail loudly
//! instead of silently falling back to defaults. Command-line flags
//! always win over file values.

use std::collections::BTreeMap;
use std::path::Path;

use lara_core::{Error, Result};

#[derive(Debug, Default)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn empty() -> Self {
        ConfigMap::default()
    }

    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("read config `{}`", path.display()), e))?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::param(
                    "config",
                    format!("line {}: expected `key = value`, got `{raw}`", lineno + 1),
                ));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !allowed.contains(&key.as_str()) {
                return Err(Error::param(
                    "config",
                    format!("line {}: unknown key `{key}`", lineno + 1),
                ));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(Error::param(
                    "config",
                    format!("line {}: duplicate key `{key}`", lineno + 1),
                ));
            }
        }
        Ok(ConfigMap { values })
    }

    /// Parses the value at `key` with `FromStr`; absent keys are `None`.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::param("config", format!("key `{key}`: cannot parse `{raw}`"))
            }),
        }
    }

    /// Parses the value at `key` as one of clap's value-enum names, so the
    /// config file accepts exactly the spellings the flags do.
    pub fn parse_enum<T: clap::ValueEnum>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => T::from_str(raw, true).map(Some).map_err(|_| {
                Error::param("config", format!("key `{key}`: invalid value `{raw}`"))
            }),
        }
    }

    pub fn parse_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.values.get(key).map(String::as_str) {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(raw) => Err(Error::param(
                "config",
                format!("key `{key}`: expected true or false, got `{raw}`"),
            )),
        }
    }

    pub fn parse_with<T>(
        &self,
        key: &str,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => parse(raw).map(Some).map_err(|reason| {
                Error::param("config", format!("key `{key}`: {reason}"))
            }),
        }
    }
}
