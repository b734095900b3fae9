//! Flat `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every config struct
//! in the crate reads itself out of a [`KvMap`] and writes itself back with
//! all defaults materialized, so a run can always be reproduced from its
//! echoed config.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(
                    line,
                    format!("line {}: expected key=value", i + 1),
                ));
            };
            map.insert(k.trim(), v.trim());
        }
        Ok(map)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
        self.insert(k.trim(), v.trim());
        Ok(())
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Removes `key` and parses it, leaving `slot` untouched when absent.
    pub fn take<T>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(raw) = self.entries.remove(key) {
            *slot = raw
                .parse()
                .map_err(|e| Error::config(key, format!("cannot parse `{raw}`: {e}")))?;
        }
        Ok(())
    }

    /// Like [`take`](Self::take) for comma-separated lists.
    pub fn take_list<T>(&mut self, key: &str, slot: &mut Vec<T>) -> Result<()>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(raw) = self.entries.remove(key) {
            *slot = parse_list(&raw).map_err(|detail| Error::config(key, detail))?;
        }
        Ok(())
    }

    /// Splits off every entry whose key starts with `prefix.`, stripping the
    /// prefix.
    pub fn split_prefix(&mut self, prefix: &str) -> KvMap {
        let dotted = format!("{prefix}.");
        let keys: Vec<String> = self
            .entries
            .keys()
            .filter(|k| k.starts_with(&dotted))
            .cloned()
            .collect();
        let mut out = KvMap::new();
        for k in keys {
            let v = self.entries.remove(&k).expect("key listed above");
            out.insert(&k[dotted.len()..], v);
        }
        out
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_keys().next() {
            Some(key) => Err(Error::config(key, "unknown key")),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

pub fn parse_list<T>(raw: &str) -> std::result::Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: Display,
{
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| format!("cannot parse list item `{}`: {e}", s.trim()))
        })
        .collect()
}

pub fn join_list<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// A configuration that round-trips through a [`KvMap`].
pub trait KvConfig: Default {
    /// Consumes the keys this config understands from `kv`.
    fn apply(&mut self, kv: &mut KvMap) -> Result<()>;

    fn to_kv(&self) -> KvMap;

    fn validate(&self) -> Result<()>;

    /// Defaults overlaid with `kv`; unknown keys are rejected.
    fn from_kv(mut kv: KvMap) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&mut kv)?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}
