//! Layered settings: defaults < preset < config file < flags.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Overlays `top` onto `base`; tables merge key by key, everything else is
/// replaced.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
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

pub fn read_config_file(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
    serde_json::to_value(table).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Seed from `COMPACTNET_SEED`, if set.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("COMPACTNET_SEED") {
        Ok(s) if s.trim().is_empty() => Ok(None),
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("COMPACTNET_SEED must be an unsigned integer, got '{s}'"))),
        Err(_) => Ok(None),
    }
}

/// Resolves the effective settings from a preset, an optional config file and
/// flag overrides (unset flags must serialize to nothing). The environment
/// seed, stored under `seed_key`, sits between the preset and the file.
pub fn resolve<T, F>(preset: &T, seed_key: &str, config: Option<&Path>, flags: &F) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut value = serde_json::to_value(preset).map_err(|e| CliError::Other(e.to_string()))?;
    if let Some(seed) = env_seed()? {
        merge(&mut value, serde_json::json!({ seed_key: seed }));
    }
    if let Some(path) = config {
        let file = read_config_file(path)?;
        check_keys(&value, &file, path)?;
        merge(&mut value, file);
    }
    merge(
        &mut value,
        serde_json::to_value(flags).map_err(|e| CliError::Other(e.to_string()))?,
    );
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid settings: {e}")))
}

fn check_keys(known: &Value, file: &Value, path: &Path) -> Result<(), CliError> {
    if let (Value::Object(k), Value::Object(f)) = (known, file) {
        if let Some(bad) = f.keys().find(|key| !k.contains_key(*key)) {
            return Err(CliError::Usage(format!(
                "unknown key '{bad}' in {} (expected one of: {})",
                path.display(),
                k.keys().cloned().collect::<Vec<_>>().join(", ")
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn later_layers_win_and_tables_merge() {
        let mut base = json!({"a": 1, "b": {"x": 1, "y": 2}, "c": [1, 2]});
        merge(&mut base, json!({"b": {"y": 3}, "c": [9]}));
        assert_eq!(base, json!({"a": 1, "b": {"x": 1, "y": 3}, "c": [9]}));
    }
}
