//! `key = value` option files merged into the command line.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

/// Parses `key = value` lines; `#` starts a comment. Keys are long flag names
/// without the leading dashes (`gamma_grid` and `gamma-grid` are the same).
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        let key = key.trim().to_ascii_lowercase().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(format!("line {}: empty key or value", i + 1));
        }
        if key == "config" {
            return Err(format!("line {}: config files cannot include other config files", i + 1));
        }
        if entries.iter().any(|(k, _)| *k == key) {
            return Err(format!("line {}: duplicate key `{key}`", i + 1));
        }
        entries.push((key, value.to_string()));
    }
    Ok(entries)
}

fn flag_value(args: &[OsString], flag: &str) -> Option<String> {
    let long = format!("--{flag}");
    let prefix = format!("--{flag}=");
    let mut it = args.iter().map(|a| a.to_string_lossy());
    while let Some(a) = it.next() {
        if a == long {
            return it.next().map(|v| v.into_owned());
        }
        if let Some(v) = a.strip_prefix(&prefix) {
            return Some(v.to_string());
        }
    }
    None
}

fn has_flag(args: &[OsString], flag: &str) -> bool {
    let long = format!("--{flag}");
    let prefix = format!("--{flag}=");
    args.iter().any(|a| {
        let a = a.to_string_lossy();
        a == long || a.starts_with(&prefix)
    })
}

/// Value of `--out` as written on the command line, if any.
pub fn out_dir(args: &[OsString]) -> Option<String> {
    flag_value(args, "out")
}

/// Appends `--key value` for every config entry whose flag is absent from `args`.
pub fn merge(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = flag_value(&args, "config") else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(&path)).map_err(|e| format!("cannot read config file {path}: {e}"))?;
    let entries = parse(&text).map_err(|e| format!("{path}: {e}"))?;
    let mut merged = args.clone();
    for (key, value) in entries {
        if !has_flag(&args, &key) {
            merged.push(format!("--{key}").into());
            merged.push(value.into());
        }
    }
    Ok(merged)
}
