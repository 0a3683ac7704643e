//! Flat `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, and `include = path`
//! splices another file (relative to the including file) at that point.
//! Later assignments override earlier ones.

use std::fs;
use std::path::{Path, PathBuf};

use pop_core::{PopError, Result};

pub type Pairs = Vec<(String, String)>;

const MAX_INCLUDE_DEPTH: usize = 16;

fn config_error(msg: String) -> PopError {
    PopError::Config(msg)
}

/// Split `key=value` (whitespace around either side is ignored).
pub fn parse_assignment(text: &str) -> Result<(String, String)> {
    let (k, v) = text.split_once('=').ok_or_else(|| config_error(format!("expected key = value, got '{text}'")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(config_error(format!("empty key in '{text}'")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// Read a config file, expanding includes.
pub fn read_config(path: &Path) -> Result<Pairs> {
    let mut out = Vec::new();
    read_into(path, 0, &mut Vec::new(), &mut out)?;
    Ok(out)
}

fn read_into(path: &Path, depth: usize, stack: &mut Vec<PathBuf>, out: &mut Pairs) -> Result<()> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(config_error(format!("includes nested deeper than {MAX_INCLUDE_DEPTH} at {}", path.display())));
    }
    let canonical = path.canonicalize().unwrap_or_else(|_| path.to_path_buf());
    if stack.contains(&canonical) {
        return Err(config_error(format!("include cycle through {}", path.display())));
    }
    let text =
        fs::read_to_string(path).map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    stack.push(canonical);
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = parse_assignment(line).map_err(|e| config_error(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if k == "include" {
            let target = path.parent().unwrap_or(Path::new(".")).join(&v);
            read_into(&target, depth + 1, stack, out)?;
        } else {
            out.push((k, v));
        }
    }
    stack.pop();
    Ok(())
}

pub fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| config_error(format!("bad value '{v}' for key '{key}'")))
}

pub fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(config_error(format!("bad value '{v}' for key '{key}' (expected true/false)"))),
    }
}

/// Comma-separated list; empty items are rejected.
pub fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

pub fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
