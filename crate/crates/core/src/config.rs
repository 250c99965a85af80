//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique;
//! a later assignment overrides an earlier one. Keys beginning with
//! `manifest.` carry run metadata and are never treated as settings.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::util;

pub const MANIFEST_PREFIX: &str = "manifest.";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", idx + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", idx + 1)));
            }
            cfg.entries.insert(normalize(key), v.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&util::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(normalize(key), value.to_string());
    }

    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.entries.get(&normalize(key)).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get_raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("cannot parse `{key}` from {v:?}"))),
        }
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get_raw(key) {
            None => Ok(None),
            Some("true" | "1" | "yes" | "on") => Ok(Some(true)),
            Some("false" | "0" | "no" | "off") => Ok(Some(false)),
            Some(v) => Err(Error::Config(format!("`{key}` expects a boolean, got {v:?}"))),
        }
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Settings only, without `manifest.*` metadata.
    pub fn settings(&self) -> KvConfig {
        KvConfig {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| !k.starts_with(MANIFEST_PREFIX))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Fails on the first setting that is not in `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for key in self.settings().entries.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = KvConfig::parse("# run\nepochs = 30\n\nbatch-size=16\nepochs = 40\n").unwrap();
        assert_eq!(cfg.get::<usize>("epochs").unwrap(), Some(40));
        assert_eq!(cfg.get::<usize>("batch_size").unwrap(), Some(16));
        assert_eq!(cfg.get::<usize>("missing").unwrap(), None);
    }

    #[test]
    fn rejects_malformed_lines_and_values() {
        assert!(KvConfig::parse("epochs 30").is_err());
        let cfg = KvConfig::parse("epochs = many").unwrap();
        assert!(cfg.get::<usize>("epochs").is_err());
    }

    #[test]
    fn manifest_keys_are_not_settings() {
        let cfg = KvConfig::parse("seed = 1\nmanifest.command = pipeline\n").unwrap();
        cfg.check_known(&["seed"]).unwrap();
        assert!(KvConfig::parse("sed = 1").unwrap().check_known(&["seed"]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = KvConfig::new();
        cfg.set("noise", 0.4);
        cfg.set("gba", true);
        assert_eq!(KvConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.get_bool("gba").unwrap(), Some(true));
    }
}
