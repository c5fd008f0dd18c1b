//! Flat `key = value` config files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Keys are case-sensitive and may use `-` or `_` interchangeably.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    n + 1
                ))
            })?;
            let key = normalize_key(k);
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            entries.insert(key, v.trim().to_string());
        }
        Ok(KvConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(&normalize_key(key)).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(normalize_key(key), value.to_string());
    }

    /// Overlays `other` on top of `self` (other wins).
    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Parses `key` with `FromStr` when present.
    pub fn parse_value<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key}` = `{v}`: {e}")))
            })
            .transpose()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn into_map(self) -> BTreeMap<String, String> {
        self.entries
    }

    /// Stable text rendering, keys sorted.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_merge_render() {
        let mut a =
            KvConfig::parse("# comment\nepochs = 70\nbatch-size=100  # trailing\n\n").unwrap();
        assert_eq!(a.get("batch_size"), Some("100"));
        assert_eq!(a.parse_value::<usize>("epochs").unwrap(), Some(70));
        let b = KvConfig::parse("epochs = 3").unwrap();
        a.merge(&b);
        assert_eq!(a.render(), "batch_size = 100\nepochs = 3\n");
        assert!(a.parse_value::<usize>("missing").unwrap().is_none());
    }

    #[test]
    fn malformed_lines() {
        assert!(KvConfig::parse("just words").is_err());
        assert!(KvConfig::parse("= 4").is_err());
        let c = KvConfig::parse("lr = fast").unwrap();
        assert!(c.parse_value::<f64>("lr").is_err());
    }
}
