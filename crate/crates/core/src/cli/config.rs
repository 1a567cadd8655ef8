//! JSON run configuration with dotted `key=value` overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Applies `key.sub=value`; the value is parsed as JSON and falls back to a
/// bare string. Unknown keys are rejected.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let mut slot = &mut *root;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Defaults, then the JSON file, then the overrides in order.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(
    file: Option<&Path>,
    overrides: &[String],
) -> Result<T> {
    let mut v = serde_json::to_value(T::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge(&mut v, patch);
    }
    for o in overrides {
        apply_override(&mut v, o)?;
    }
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::TrainConfig;

    #[test]
    fn overrides_reach_nested_fields() {
        let c: TrainConfig = resolve(
            None,
            &["model.d=16".into(), "lr=0".into(), "iterations=7".into()],
        )
        .unwrap();
        assert_eq!((c.model.d, c.lr, c.iterations), (16, 0.0, 7));
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"lr": 0.5, "model": {"k": 3}}"#).unwrap();
        let c: TrainConfig = resolve(Some(&p), &["lr=0.25".into()]).unwrap();
        assert_eq!(
            (c.lr, c.model.k, c.model.d),
            (0.25, 3, TrainConfig::default().model.d)
        );
    }

    #[test]
    fn bad_keys_and_types_are_config_errors() {
        for o in ["nope=1", "model.nope=1", "lr", "lr=\"x\""] {
            let e = resolve::<TrainConfig>(None, &[o.into()]).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{o}");
        }
    }
}
