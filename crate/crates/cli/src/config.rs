use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Overlays the flags that were given onto the JSON object in `file`.
/// Unset flags (`None`, empty lists) fall back to the file.
pub fn merge<A: Serialize + DeserializeOwned>(flags: &A, file: Option<&Path>) -> anyhow::Result<A> {
    let Some(path) = file else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut base: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let Value::Object(base_map) = &mut base else {
        anyhow::bail!("config {} must hold a JSON object", path.display());
    };
    let Value::Object(given) = serde_json::to_value(flags)? else {
        unreachable!("argument structs serialize to objects");
    };
    for (k, v) in given {
        let unset = v.is_null() || v.as_array().is_some_and(|a| a.is_empty());
        if !unset {
            base_map.insert(k, v);
        }
    }
    serde_json::from_value(base).with_context(|| format!("config {} does not match the command's options", path.display()))
}
