//! The `key = value` record format used by calibration caches and study
//! reports: self-describing, ordered, text-based, optionally checksummed.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// An ordered list of `key = value` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvRecord {
    entries: Vec<(String, String)>,
}

impl KvRecord {
    pub fn new() -> Self {
        KvRecord::default()
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Integrity(format!("missing key `{key}`")))
    }

    pub fn parse_f64(&self, key: &str) -> Result<f64> {
        self.require(key)?
            .parse::<f64>()
            .map_err(|_| Error::Integrity(format!("key `{key}` is not a number")))
    }

    pub fn parse_usize(&self, key: &str) -> Result<usize> {
        self.require(key)?
            .parse::<usize>()
            .map_err(|_| Error::Integrity(format!("key `{key}` is not an integer")))
    }

    pub fn parse_u64(&self, key: &str) -> Result<u64> {
        self.require(key)?
            .parse::<u64>()
            .map_err(|_| Error::Integrity(format!("key `{key}` is not an integer")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Render as `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Render with a trailing `checksum = sha256:<hex>` line covering all
    /// preceding bytes.
    pub fn to_text_checksummed(&self) -> String {
        let mut body = self.to_text();
        let digest = sha256_hex(body.as_bytes());
        let _ = writeln!(body, "checksum = sha256:{digest}");
        body
    }

    /// Parse `key = value` lines; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut record = KvRecord::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Integrity(format!("malformed line `{line}`")))?;
            record.push(key.trim(), value.trim());
        }
        Ok(record)
    }

    /// Parse a checksummed rendering, verifying the trailing digest over the
    /// exact preceding bytes.
    pub fn from_text_checksummed(text: &str) -> Result<Self> {
        let marker = "checksum = sha256:";
        let pos = text
            .rfind(marker)
            .ok_or_else(|| Error::Integrity("missing checksum line".into()))?;
        let (body, tail) = text.split_at(pos);
        let stored = tail
            .trim_end()
            .strip_prefix(marker)
            .ok_or_else(|| Error::Integrity("malformed checksum line".into()))?;
        let digest = sha256_hex(body.as_bytes());
        if digest != stored {
            return Err(Error::Integrity(
                "checksum mismatch: file was modified or truncated".into(),
            ));
        }
        Self::from_text(body)
    }
}

/// Render several records separated by blank lines.
pub fn records_to_text(records: &[KvRecord]) -> String {
    records
        .iter()
        .map(|r| r.to_text())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Split blank-line-separated records.
pub fn records_from_text(text: &str) -> Result<Vec<KvRecord>> {
    text.split("\n\n")
        .filter(|chunk| !chunk.trim().is_empty())
        .map(KvRecord::from_text)
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Bit-exact f64 serialization as big-endian hex of the IEEE bits.
pub fn f64_to_hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

pub fn f64_from_hex(s: &str) -> Result<f64> {
    let bits = u64::from_str_radix(s.trim(), 16)
        .map_err(|_| Error::Integrity(format!("`{s}` is not a hex float")))?;
    Ok(f64::from_bits(bits))
}
