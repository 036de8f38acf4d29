//! Flat `key = value` text documents.
//!
//! All persisted artifacts (fit files, manifests, window results) share this
//! one format: UTF-8 lines of `key = value`, `#` comments, and blank lines.
//! Keys are unique and order is preserved. Floating-point values are written
//! with Rust's shortest round-trip formatting, so parsing a written document
//! recovers every `f64` bit-exactly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// An ordered key-value document.
#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    pairs: Vec<(String, String)>,
    index: HashMap<String, usize>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a key. Duplicate keys are rejected to keep documents
    /// unambiguous.
    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) -> Result<()> {
        if key.contains('=') || key.contains('\n') || key.trim() != key || key.is_empty() {
            return Err(Error::Parse(format!("invalid key {key:?}")));
        }
        let value = value.to_string();
        if value.contains('\n') {
            return Err(Error::Parse(format!("value for {key:?} contains a newline")));
        }
        if self.index.contains_key(key) {
            return Err(Error::Parse(format!("duplicate key {key:?}")));
        }
        self.index.insert(key.to_string(), self.pairs.len());
        self.pairs.push((key.to_string(), value));
        Ok(())
    }

    /// Insert an `f64` with bit-exact round-trip formatting.
    pub fn set_f64(&mut self, key: &str, value: f64) -> Result<()> {
        self.set(key, format_f64(value))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|&i| self.pairs[i].1.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Parse(format!("missing key {key:?}")))
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        parse_f64(self.require(key)?)
            .ok_or_else(|| Error::Parse(format!("key {key:?} is not a float")))
    }

    pub fn require_usize(&self, key: &str) -> Result<usize> {
        self.require(key)?
            .parse()
            .map_err(|_| Error::Parse(format!("key {key:?} is not an unsigned integer")))
    }

    pub fn require_u64(&self, key: &str) -> Result<u64> {
        self.require(key)?
            .parse()
            .map_err(|_| Error::Parse(format!("key {key:?} is not an unsigned integer")))
    }

    pub fn require_bool(&self, key: &str) -> Result<bool> {
        match self.require(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(Error::Parse(format!(
                "key {key:?} is not a bool (got {other:?})"
            ))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(k, _)| k.as_str())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    lineno + 1
                )));
            };
            doc.set(key.trim(), value.trim())?;
        }
        Ok(doc)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Parse(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }
}

/// Shortest round-trip representation of an `f64`.
pub fn format_f64(value: f64) -> String {
    if value.is_nan() {
        "nan".to_string()
    } else if value == f64::INFINITY {
        "inf".to_string()
    } else if value == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{value}")
    }
}

/// Parse a float written by [`format_f64`] (also accepts ordinary decimal and
/// exponent notation).
pub fn parse_f64(text: &str) -> Option<f64> {
    match text {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        other => other.parse().ok(),
    }
}

/// FNV-1a 64-bit hash, used for stable content fingerprints in manifests.
/// Implemented here so fingerprints never depend on the standard library's
/// unspecified hasher.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
