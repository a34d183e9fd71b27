//! Flat `key=value` text files, used for model persistence and simulator
//! configuration. Blank lines and `#` comments are allowed; duplicate keys
//! are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn parse_str(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!("line {}: expected `key=value`", idx + 1))
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "line {}: empty key",
                idx + 1
            )));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::InvalidParameter(format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}

pub fn parse_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_str(&text)
}

pub fn write_file(path: &Path, rendered: &str) -> Result<()> {
    fs::write(path, rendered).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn require<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::InvalidParameter(format!("missing key `{key}`")))
}

pub fn require_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    parse_f64(key, require(map, key)?)
}

pub fn require_u64(map: &BTreeMap<String, String>, key: &str) -> Result<u64> {
    let raw = require(map, key)?;
    raw.parse::<u64>()
        .map_err(|_| Error::InvalidParameter(format!("key `{key}`: invalid integer `{raw}`")))
}

pub fn optional_f64(map: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    match map.get(key) {
        Some(raw) => parse_f64(key, raw).map(Some),
        None => Ok(None),
    }
}

fn parse_f64(key: &str, raw: &str) -> Result<f64> {
    let value: f64 = raw
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("key `{key}`: invalid number `{raw}`")))?;
    if !value.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "key `{key}`: non-finite value `{raw}`"
        )));
    }
    Ok(value)
}

/// Formats a float with nine significant digits, the precision used by every
/// persisted numeric value in this format.
pub fn format_sig9(value: f64) -> String {
    format!("{value:.8e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let map = parse_str("# header\n\na=1\nb = two \n").unwrap();
        assert_eq!(map.get("a").unwrap(), "1");
        assert_eq!(map.get("b").unwrap(), "two");
    }

    #[test]
    fn rejects_duplicates_and_bad_lines() {
        assert!(parse_str("a=1\na=2").is_err());
        assert!(parse_str("just-a-line").is_err());
    }

    #[test]
    fn sig9_round_trips() {
        for &v in &[12.0, 0.3, 1e-5, 218.25, -3.5e4] {
            let s = format_sig9(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(format_sig9(back), s);
            assert!((back - v).abs() <= v.abs() * 1e-8);
        }
    }
}
