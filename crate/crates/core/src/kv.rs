//! Line-oriented `key = value` files. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{HttError, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvMap {
    source: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl KvMap {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HttError::Config(format!("{source}:{}: expected `key = value`, got `{line}`", no + 1))
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(HttError::Config(format!("{source}:{}: empty key", no + 1)));
            }
            if entries.insert(key.clone(), (v.trim().to_string(), no + 1)).is_some() {
                return Err(HttError::Config(format!("{source}:{}: duplicate key `{key}`", no + 1)));
            }
        }
        Ok(KvMap {
            source: source.to_string(),
            entries,
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|e| {
                HttError::Config(format!("{}:{line}: field `{key}`: cannot parse `{v}`: {e}", self.source))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| HttError::Config(format!("{}: missing required field `{key}`", self.source)))
    }

    /// Rejects keys outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(HttError::Config(format!("{}:{line}: unknown field `{k}`", self.source)));
            }
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }
}
