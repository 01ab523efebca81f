//! Flat `key = value` configuration files.
//!
//! One entry per line; `#` starts a comment that runs to the end of the
//! line; blank lines are ignored. Keys are lowercase ASCII letters, digits,
//! `-` and `_`, and may appear only once.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parsed entries with the line each came from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, (usize, String)>,
}

impl Config {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Line number (one-based) of `key`.
    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|(l, _)| *l)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(key, value)` pairs in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, (_, v))| (k.as_str(), v.as_str()))
    }

    /// Fail on the first key not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config { line: *line, message: format!("unknown key {key:?}") });
            }
        }
        Ok(())
    }

    /// Parse the value of `key` if present.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config { line: *line, message: format!("cannot parse {v:?} for key {key:?}") }),
        }
    }
}

fn valid_key(key: &str) -> bool {
    !key.is_empty() && key.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_')
}

/// Parse a configuration file.
pub fn parse_config(text: &str) -> Result<Config> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) =
            content.split_once('=').ok_or_else(|| Error::Config { line, message: "expected `key = value`".into() })?;
        let (key, value) = (key.trim(), value.trim());
        if !valid_key(key) {
            return Err(Error::Config { line, message: format!("invalid key {key:?}") });
        }
        if value.is_empty() {
            return Err(Error::Config { line, message: format!("missing value for {key:?}") });
        }
        if let Some((first, _)) = entries.insert(key.to_string(), (line, value.to_string())) {
            return Err(Error::Config { line, message: format!("duplicate key {key:?} (first on line {first})") });
        }
    }
    Ok(Config { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_and_comments() {
        let c = parse_config("# run\nnu = 3\n\n  k=1   # one wall pair\nr = 0.05\n").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.get("k"), Some("1"));
        assert_eq!(c.parse::<f64>("r").unwrap(), Some(0.05));
        assert_eq!(c.line_of("k"), Some(4));
        assert_eq!(c.parse::<usize>("seed").unwrap(), None);
    }

    #[test]
    fn malformed_lines() {
        for (text, line) in [("nu 3", 1), ("nu = 3\nnu = 4", 2), ("\nNu = 3", 2), ("r =", 1), ("= 2", 1)] {
            match parse_config(text) {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_keys() {
        let c = parse_config("nu = 2\ncolor = red").unwrap();
        assert!(matches!(c.check_keys(&["nu"]), Err(Error::Config { line: 2, .. })));
        assert!(c.check_keys(&["nu", "color"]).is_ok());
        assert!(matches!(c.parse::<usize>("color"), Err(Error::Config { line: 2, .. })));
    }
}
