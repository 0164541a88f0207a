//! Layered run configuration: defaults < config file < command-line flags,
//! with `GRAPHTRACK_SEED` as the global seed fallback.
//!
//! The config file is TOML with one table per subcommand plus `[global]`;
//! keys mirror the long flag names (dashes may be written as underscores).

use anyhow::{Context, Result};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    global: BTreeMap<String, toml::Value>,
    sections: BTreeMap<String, BTreeMap<String, toml::Value>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let table: toml::Table =
            text.parse().with_context(|| format!("parsing config file {}", path.display()))?;
        let mut cfg = ConfigFile::default();
        for (key, value) in table {
            match value {
                toml::Value::Table(section) => {
                    let mut map = BTreeMap::new();
                    for (k, v) in section {
                        map.insert(normalize(&k), v);
                    }
                    if key == "global" {
                        cfg.global = map;
                    } else {
                        cfg.sections.insert(key, map);
                    }
                }
                other => {
                    cfg.global.insert(normalize(&key), other);
                }
            }
        }
        Ok(cfg)
    }

    fn lookup(&self, section: &str, key: &str) -> Option<&toml::Value> {
        let key = normalize(key);
        self.sections
            .get(section)
            .and_then(|s| s.get(&key))
            .or_else(|| self.global.get(&key))
    }
}

fn normalize(key: &str) -> String {
    key.replace('-', "_")
}

/// Resolves one command's settings from flags, file, env, and defaults.
pub struct Overlay<'a> {
    file: &'a ConfigFile,
    section: &'a str,
}

impl<'a> Overlay<'a> {
    pub fn new(file: &'a ConfigFile, section: &'a str) -> Self {
        Self { file, section }
    }

    pub fn f64(&self, key: &str, flag: Option<f64>, default: f64) -> Result<f64> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.lookup(self.section, key) {
            Some(v) => v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .with_context(|| format!("config key '{key}' must be a number")),
            None => Ok(default),
        }
    }

    pub fn f64_opt(&self, key: &str, flag: Option<f64>) -> Result<Option<f64>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.lookup(self.section, key) {
            Some(v) => Ok(Some(
                v.as_float()
                    .or_else(|| v.as_integer().map(|i| i as f64))
                    .with_context(|| format!("config key '{key}' must be a number"))?,
            )),
            None => Ok(None),
        }
    }

    pub fn usize(&self, key: &str, flag: Option<usize>, default: usize) -> Result<usize> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.lookup(self.section, key) {
            Some(v) => {
                let i = v
                    .as_integer()
                    .with_context(|| format!("config key '{key}' must be an integer"))?;
                Ok(usize::try_from(i).with_context(|| format!("config key '{key}' negative"))?)
            }
            None => Ok(default),
        }
    }

    pub fn usize_opt(&self, key: &str, flag: Option<usize>) -> Result<Option<usize>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.lookup(self.section, key) {
            Some(v) => {
                let i = v
                    .as_integer()
                    .with_context(|| format!("config key '{key}' must be an integer"))?;
                Ok(Some(usize::try_from(i)?))
            }
            None => Ok(None),
        }
    }

    pub fn string(&self, key: &str, flag: Option<String>, default: &str) -> Result<String> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.lookup(self.section, key) {
            Some(v) => Ok(v
                .as_str()
                .with_context(|| format!("config key '{key}' must be a string"))?
                .to_string()),
            None => Ok(default.to_string()),
        }
    }

    pub fn string_opt(&self, key: &str, flag: Option<String>) -> Result<Option<String>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.lookup(self.section, key) {
            Some(v) => Ok(Some(
                v.as_str()
                    .with_context(|| format!("config key '{key}' must be a string"))?
                    .to_string(),
            )),
            None => Ok(None),
        }
    }

    pub fn bool(&self, key: &str, flag: bool, default: bool) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        match self.file.lookup(self.section, key) {
            Some(v) => v
                .as_bool()
                .with_context(|| format!("config key '{key}' must be a boolean")),
            None => Ok(default),
        }
    }

    /// Seed resolution order: flag, config file, GRAPHTRACK_SEED, default 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(v) = flag {
            return Ok(v);
        }
        if let Some(v) = self.file.lookup(self.section, "seed") {
            let i = v.as_integer().context("config key 'seed' must be an integer")?;
            return Ok(i as u64);
        }
        match std::env::var("GRAPHTRACK_SEED") {
            Ok(text) => text
                .parse::<u64>()
                .context("GRAPHTRACK_SEED must be an unsigned integer"),
            Err(_) => Ok(0),
        }
    }
}
