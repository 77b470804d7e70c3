//! Flat `key = value` config files merged with command-line flags.
//!
//! A flag always wins over the file, and the file over the built-in default.
//! Every value a command resolves is recorded so the run can be identified by
//! a hash of its effective configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use crate::UsageError;

/// Keys accepted in a config file.
pub const KNOWN_KEYS: &[&str] = &[
    "aggregation",
    "allow_tau_only",
    "checkpoint",
    "classifier_epochs",
    "classifier_lr",
    "data",
    "dim",
    "dtw_gamma",
    "episodes",
    "episodes_per_epoch",
    "epochs",
    "lr",
    "method",
    "noise_sigma",
    "order_pairs",
    "out",
    "output_dim",
    "patience",
    "projection",
    "queries",
    "seed",
    "segments",
    "shot",
    "split",
    "tau_init",
    "test_classes",
    "test_videos",
    "train_classes",
    "train_videos",
    "tuple_len",
    "tuple_mode",
    "val_classes",
    "val_episodes",
    "val_videos",
    "way",
    "workers",
];

/// Keys that change where or how fast a run happens, not what it computes.
const NOT_HASHED: &[&str] = &["out", "workers"];

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                UsageError(format!(
                    "config line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                ))
            })?;
            let key = normalize(key);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(
                    UsageError(format!("config line {}: unknown key {key:?}", lineno + 1)).into(),
                );
            }
            if file.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(UsageError(format!(
                    "config line {}: duplicate key {key:?}",
                    lineno + 1
                ))
                .into());
            }
        }
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text)
            }
        }
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| UsageError(format!("config key {key}: {e}")).into()),
        }
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = self.optional(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.optional(key, flag)?.ok_or_else(|| {
            UsageError(format!(
                "missing required setting `{key}` (flag --{})",
                key.replace('_', "-")
            ))
            .into()
        })
    }

    /// Boolean switch: set by the flag or by `key = true` in the file.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let value = flag || self.file_value::<bool>(key)?.unwrap_or(false);
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Comma-separated list; the flag may also be repeated.
    pub fn list<T>(&mut self, key: &str, flag: Vec<String>, default: &str) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = if flag.is_empty() {
            self.file
                .get(key)
                .cloned()
                .unwrap_or_else(|| default.to_string())
        } else {
            flag.join(",")
        };
        let items = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| UsageError(format!("{key}: {e}")).into())
            })
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            return Err(UsageError(format!("{key}: empty list")).into());
        }
        self.resolved.insert(key.to_string(), raw);
        Ok(items)
    }

    /// `sha256` over the sorted `key=value` lines of every resolved setting
    /// that affects results.
    pub fn config_hash(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(format!("command={command}\n"));
        for (k, v) in &self.resolved {
            if !NOT_HASHED.contains(&k.as_str()) {
                h.update(format!("{k}={v}\n"));
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let mut s = Settings::parse("way = 7\n# comment\nshot=3  # trailing\n").unwrap();
        assert_eq!(s.value("way", Some(9usize), 5).unwrap(), 9);
        assert_eq!(s.value("shot", None, 1usize).unwrap(), 3);
        assert_eq!(s.value("queries", None, 1usize).unwrap(), 1);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Settings::parse("wya = 5").is_err());
        assert!(Settings::parse("way 5").is_err());
        assert!(Settings::parse("way = 5\nway = 6").is_err());
        let mut s = Settings::parse("way = five").unwrap();
        assert!(s.value("way", None, 5usize).is_err());
    }

    #[test]
    fn hash_ignores_workers_and_output() {
        let mut a = Settings::default();
        a.value("way", Some(5usize), 5).unwrap();
        a.value("workers", Some(1usize), 0).unwrap();
        a.optional("out", Some("x".to_string())).unwrap();
        let mut b = Settings::default();
        b.value("way", Some(5usize), 5).unwrap();
        b.value("workers", Some(8usize), 0).unwrap();
        assert_eq!(a.config_hash("eval"), b.config_hash("eval"));
        b.value("way", Some(6usize), 5).unwrap();
        assert_ne!(a.config_hash("eval"), b.config_hash("eval"));
        assert_ne!(a.config_hash("eval"), a.config_hash("train"));
    }

    #[test]
    fn lists_split_on_commas() {
        let mut s = Settings::parse("way = 5, 10,15").unwrap();
        assert_eq!(s.list::<usize>("way", vec![], "5").unwrap(), [5, 10, 15]);
        assert_eq!(
            s.list::<usize>("way", vec!["20".into(), "24".into()], "5")
                .unwrap(),
            [20, 24]
        );
    }
}
