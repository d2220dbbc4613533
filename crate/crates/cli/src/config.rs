//! Configuration loading.
//!
//! A command's configuration starts from its defaults, is overlaid with the
//! JSON document given by `--config` (a previous run's manifest also works),
//! then with each `--set key=value`, and is finally deserialized with unknown
//! keys rejected.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};
use crate::output::MANIFEST_VERSION_KEY;

pub trait Config: Default + Serialize + DeserializeOwned {
    fn seed_mut(&mut self) -> &mut u64;
    /// Checks everything that can be checked before computing.
    fn check(&self) -> CliResult<()>;
}

pub struct Overrides<'a> {
    pub file: Option<&'a Path>,
    pub set: &'a [String],
    pub seed: Option<u64>,
}

pub fn resolve<C: Config>(command: &str, o: &Overrides<'_>) -> CliResult<C> {
    let mut value = serde_json::to_value(C::default()).map_err(CliError::config)?;
    if let Some(path) = o.file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut value, unwrap_manifest(command, doc)?);
    }
    for item in o.set {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {item:?}")))?;
        set_path(&mut value, key, parse_scalar(raw))?;
    }
    let mut cfg: C = serde_json::from_value(value).map_err(CliError::config)?;
    if let Some(seed) = o.seed {
        *cfg.seed_mut() = seed;
    }
    cfg.check()?;
    Ok(cfg)
}

fn unwrap_manifest(command: &str, doc: Value) -> CliResult<Value> {
    let Value::Object(mut map) = doc else {
        return Err(CliError::Config("configuration must be a JSON object".into()));
    };
    if !map.contains_key(MANIFEST_VERSION_KEY) {
        return Ok(Value::Object(map));
    }
    match map.get("command").and_then(Value::as_str) {
        Some(c) if c == command => {}
        other => {
            return Err(CliError::Config(format!(
                "manifest was written by {other:?}, not {command:?}"
            )))
        }
    }
    map.remove("config").ok_or_else(|| CliError::Config("manifest has no config".into()))
}

/// Objects merge key by key; anything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// JSON if it parses, otherwise a string.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

fn set_path(root: &mut Value, key: &str, v: Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed key {key:?}")));
    }
    let mut cur = root;
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        cur = match cur {
            Value::Object(map) => map.entry(part.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let len = items.len();
                part.parse::<usize>()
                    .ok()
                    .and_then(|i| items.get_mut(i))
                    .ok_or_else(|| CliError::Config(format!("{key}: index {part} out of range for a list of {len}")))?
            }
            _ => {
                return Err(CliError::Config(format!(
                    "{key}: {} is not an object",
                    parts[..depth].join(".")
                )))
            }
        };
        if last {
            *cur = v;
            return Ok(());
        }
    }
    unreachable!("key has at least one part")
}
