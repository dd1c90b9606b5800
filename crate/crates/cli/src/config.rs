//! Layered configuration: built-in defaults, then a TOML file, then
//! `--set key.path=value` overrides. The merged table is deserialized into
//! the target type, whose schema rejects unknown keys.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::{usage, CliResult};

pub fn resolve<T: Serialize + DeserializeOwned>(base: &T, file: Option<&Path>, sets: &[String]) -> CliResult<T> {
    let mut table = Table::try_from(base).map_err(|e| usage(format!("cannot encode defaults: {e}")))?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let overlay: Table = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        merge(&mut table, overlay);
    }
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got {s:?}")))?;
        set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| usage(format!("invalid configuration: {}", e.message())))
}

fn merge(into: &mut Table, from: Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// A TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(usage(format!("malformed key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let next = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match next {
            Value::Table(t) => t,
            _ => return Err(usage(format!("{key}: {p} is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn to_toml<T: Serialize>(value: &T) -> CliResult<String> {
    toml::to_string(value).map_err(|e| usage(format!("cannot encode configuration: {e}")))
}
