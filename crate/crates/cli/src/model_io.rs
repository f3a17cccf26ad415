//! Versioned JSON model files.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so a save/load round trip is exact.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;
use wavefis_core::model::{Fingerprint, ModelState, StandardizationPolicy, SCHEMA_VERSION};
use wavefis_core::series::{RegressionTarget, Task};
use wavefis_core::{AttentionParams, FuzzyRuleBase, WaveletKind};

/// Value of the `format` key identifying model files.
pub const FORMAT: &str = "wavefis-model";

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
}

pub fn to_string(model: &ModelState) -> String {
    let mut doc = serde_json::to_value(model).expect("model state serializes");
    if let Value::Object(map) = &mut doc {
        map.insert("format".into(), Value::String(FORMAT.into()));
    }
    let mut text = serde_json::to_string_pretty(&doc).expect("json value serializes");
    text.push('\n');
    text
}

pub fn from_str(text: &str) -> Result<ModelState, ModelIoError> {
    let corrupt = |what: String| ModelIoError::CorruptFile(what);
    let mut doc: Value = serde_json::from_str(text).map_err(|e| corrupt(format!("document ({e})")))?;
    let map = doc
        .as_object_mut()
        .ok_or_else(|| corrupt("document is not an object".into()))?;
    match map.remove("format") {
        Some(Value::String(f)) if f == FORMAT => {}
        _ => return Err(corrupt("format".into())),
    }
    let version = map
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| corrupt("schema_version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(ModelIoError::SchemaVersionMismatch {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    const FIELDS: [&str; 13] = [
        "schema_version",
        "task",
        "basis",
        "depth",
        "window",
        "horizon",
        "target_channel",
        "regression_target",
        "channels",
        "standardization",
        "attention",
        "rules",
        "fingerprint",
    ];
    if let Some(missing) = FIELDS.iter().find(|f| !map.contains_key(**f)) {
        return Err(corrupt((*missing).into()));
    }
    for field in FIELDS {
        // Deserialize field by field so the error names the culprit.
        let value = &map[field];
        let ok = match field {
            "schema_version" => parses::<u32>(value),
            "task" => parses::<Task>(value),
            "basis" => parses::<WaveletKind>(value),
            "regression_target" => parses::<RegressionTarget>(value),
            "channels" => parses::<Vec<String>>(value),
            "standardization" => parses::<StandardizationPolicy>(value),
            "attention" => parses::<AttentionParams>(value),
            "rules" => parses::<FuzzyRuleBase>(value),
            "fingerprint" => parses::<Fingerprint>(value),
            _ => parses::<usize>(value),
        };
        if !ok {
            return Err(corrupt(field.into()));
        }
    }
    let model: ModelState = serde_json::from_value(doc).map_err(|e| corrupt(format!("{e}")))?;
    model.validate().map_err(|e| corrupt(format!("{e}")))?;
    Ok(model)
}

fn parses<T: DeserializeOwned>(value: &Value) -> bool {
    T::deserialize(value).is_ok()
}

pub fn save_model(model: &ModelState, path: &Path) -> Result<(), ModelIoError> {
    fs::write(path, to_string(model)).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<ModelState, ModelIoError> {
    let text = fs::read_to_string(path).map_err(|source| ModelIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_str(&text)
}
