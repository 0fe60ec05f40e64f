//! Layered run configuration: command-line flags over a TOML file over
//! built-in defaults.
//!
//! The file holds global keys (`seed`, `threads`, `out_dir`) at the top
//! level and one table per subcommand, e.g. `[scale-curve]`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{io, Error, Result};

pub const GLOBAL_KEYS: &[&str] = &["seed", "threads", "out_dir"];

/// Overlays `over` onto `base`. Objects merge key by key; `null` in `over`
/// means "not given" and leaves `base` untouched; anything else replaces.
pub fn overlay(base: &mut Value, over: &Value) {
    match (base, over) {
        (_, Value::Null) => {}
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => overlay(slot, v),
                    None if !v.is_null() => {
                        b.insert(k.clone(), v.clone());
                    }
                    None => {}
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Parses a TOML config file into a JSON object.
pub fn load_file(path: &Path, sections: &[&str]) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e
            .span()
            .map_or(0, |s| text[..s.start].matches('\n').count() as u64 + 1),
        message: e.message().to_string(),
    })?;
    let value = serde_json::to_value(table).map_err(|e| Error::Invalid(e.to_string()))?;
    let Value::Object(map) = value else {
        unreachable!("a TOML document is a table")
    };
    if let Some(unknown) = map
        .keys()
        .find(|k| !GLOBAL_KEYS.contains(&k.as_str()) && !sections.contains(&k.as_str()))
    {
        return Err(Error::Invalid(format!(
            "{}: unknown key {unknown:?}",
            path.display()
        )));
    }
    Ok(map)
}

/// `defaults`, then each layer in turn, deserialized back into `T`.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, layers: &[Value]) -> Result<T> {
    let mut merged = serde_json::to_value(defaults).map_err(|e| Error::Invalid(e.to_string()))?;
    for layer in layers {
        overlay(&mut merged, layer);
    }
    serde_json::from_value(merged).map_err(|e| Error::Invalid(format!("configuration: {e}")))
}

/// The top-level global keys of a config file.
pub fn globals_of(file: &Map<String, Value>) -> Value {
    Value::Object(
        file.iter()
            .filter(|(k, _)| GLOBAL_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    )
}
