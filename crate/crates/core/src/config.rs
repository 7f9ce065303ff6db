//! Flat `key = value` configuration files.
//!
//! Every stage that takes a config (sampler, trainer) reads this format:
//! one `key = value` per line, `#` comments, blank lines ignored. Values
//! from the command line (`-c key=value`) overlay the file. Consumers pull
//! keys out of the map as they go; [`KvConfig::finish`] then rejects
//! anything left over, so a typo fails loudly instead of silently falling
//! back to a default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
    source: String,
}

impl KvConfig {
    pub fn parse(text: &str, source: &str) -> Result<KvConfig> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{source}:{}: expected 'key = value', got {raw:?}",
                    i + 1
                )));
            };
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if key.is_empty() {
                return Err(Error::Config(format!("{source}:{}: empty key", i + 1)));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("{source}:{}: duplicate key '{key}'", i + 1)));
            }
        }
        Ok(KvConfig { entries, source: source.to_string() })
    }

    pub fn load(path: &Path) -> Result<KvConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KvConfig::parse(&text, &path.display().to_string())
    }

    pub fn empty(source: &str) -> KvConfig {
        KvConfig { entries: BTreeMap::new(), source: source.to_string() }
    }

    /// Overlay `key=value` pairs (e.g. from the command line) on top of the
    /// file contents; later values win.
    pub fn overlay(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let Some((key, value)) = p.split_once('=') else {
                return Err(Error::Config(format!("override {p:?} is not key=value")));
            };
            self.entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    /// Remove and parse a key, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                Error::Config(format!("{}: key '{key}': cannot parse {raw:?}: {e}", self.source))
            }),
        }
    }

    /// Remove and parse a key, falling back to a default.
    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.take(key)?.ok_or_else(|| {
            Error::Config(format!("{}: missing required key '{key}'", self.source))
        })
    }

    /// Remove every key starting with `prefix`; yields `(suffix, value)`.
    pub fn take_prefixed(&mut self, prefix: &str) -> Vec<(String, String)> {
        let keys: Vec<String> = self
            .entries
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        keys.into_iter()
            .map(|k| {
                let v = self.entries.remove(&k).unwrap();
                (k[prefix.len()..].to_string(), v)
            })
            .collect()
    }

    /// Fail if any keys were never consumed (catches typos).
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
            Err(Error::Config(format!(
                "{}: unrecognized key(s): {}",
                self.source,
                keys.join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_values() {
        let text = "# a comment\n\nseed = 42\nname = hello world\n";
        let mut kv = KvConfig::parse(text, "test").unwrap();
        assert_eq!(kv.take::<u64>("seed").unwrap(), Some(42));
        assert_eq!(kv.take::<String>("name").unwrap(), Some("hello world".to_string()));
        kv.finish().unwrap();
    }

    #[test]
    fn leftover_keys_are_an_error() {
        let mut kv = KvConfig::parse("seed = 1\nsede = 2\n", "test").unwrap();
        let _ = kv.take::<u64>("seed").unwrap();
        let err = kv.finish().unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
    }

    #[test]
    fn overlay_wins_over_file_values() {
        let mut kv = KvConfig::parse("steps = 100\n", "test").unwrap();
        kv.overlay(&["steps=250".to_string()]).unwrap();
        assert_eq!(kv.take::<u32>("steps").unwrap(), Some(250));
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut kv = KvConfig::parse("steps = many\n", "test").unwrap();
        let err = kv.take::<u32>("steps").unwrap_err();
        assert!(err.to_string().contains("steps"), "{err}");
    }

    #[test]
    fn duplicate_and_malformed_lines_are_rejected() {
        assert!(KvConfig::parse("a = 1\na = 2\n", "t").is_err());
        assert!(KvConfig::parse("just a line\n", "t").is_err());
    }

    #[test]
    fn prefixed_keys_come_out_together() {
        let mut kv = KvConfig::parse("count = 5\ncount.2p = 9\ncount.pin = 3\n", "t").unwrap();
        let mut pairs = kv.take_prefixed("count.");
        pairs.sort();
        assert_eq!(
            pairs,
            vec![("2p".to_string(), "9".to_string()), ("pin".to_string(), "3".to_string())]
        );
        assert_eq!(kv.take::<usize>("count").unwrap(), Some(5));
    }
}
