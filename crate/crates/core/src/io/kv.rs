//! Line-oriented `key = value` configuration text.
//!
//! Grammar: one `key = value` pair per line; blank lines and lines whose
//! first non-space character is `#` are ignored. Keys and values are
//! trimmed. Emission is canonical (fixed key order, `key = value\n`), so
//! emit-parse round-trips reproduce the struct exactly.

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Clone, Debug)]
pub struct KvEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str, path: &Path) -> Result<Vec<KvEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((k, v)) = trimmed.split_once('=') else {
            return Err(Error::ConfigFile {
                path: path.to_path_buf(),
                line,
                detail: format!("expected `key = value`, got {trimmed:?}"),
            });
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::ConfigFile {
                path: path.to_path_buf(),
                line,
                detail: "empty key".into(),
            });
        }
        out.push(KvEntry {
            line,
            key: key.to_string(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn emit(pairs: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    s
}

pub fn unknown_key(e: &KvEntry, path: &Path) -> Error {
    Error::ConfigFile {
        path: path.to_path_buf(),
        line: e.line,
        detail: format!("unknown key {:?}", e.key),
    }
}

fn bad_value(e: &KvEntry, path: &Path, wanted: &str) -> Error {
    Error::ConfigFile {
        path: path.to_path_buf(),
        line: e.line,
        detail: format!("key {:?}: expected {wanted}, got {:?}", e.key, e.value),
    }
}

pub fn parse_usize(e: &KvEntry, path: &Path) -> Result<usize> {
    e.value.parse().map_err(|_| bad_value(e, path, "an integer"))
}

pub fn parse_u32(e: &KvEntry, path: &Path) -> Result<u32> {
    e.value.parse().map_err(|_| bad_value(e, path, "an integer"))
}

pub fn parse_u64(e: &KvEntry, path: &Path) -> Result<u64> {
    e.value.parse().map_err(|_| bad_value(e, path, "an integer"))
}

pub fn parse_f64(e: &KvEntry, path: &Path) -> Result<f64> {
    e.value.parse().map_err(|_| bad_value(e, path, "a number"))
}

pub fn parse_bool(e: &KvEntry, path: &Path) -> Result<bool> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(e, path, "true or false")),
    }
}

/// Comma-separated non-negative integers; empty string means empty list.
pub fn parse_index_list(e: &KvEntry, path: &Path) -> Result<Vec<usize>> {
    if e.value.is_empty() {
        return Ok(Vec::new());
    }
    e.value
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| bad_value(e, path, "comma-separated integers"))
        })
        .collect()
}

pub fn emit_index_list(xs: &[usize]) -> String {
    xs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
