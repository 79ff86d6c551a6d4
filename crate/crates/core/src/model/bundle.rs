use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelError};
use crate::schema::ValidSchema;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// A model plus what is needed to use it safely later: the fingerprints of
/// the schemas it was trained against and free-form training metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub model: Model,
    /// Task id to schema fingerprint.
    pub schema_fingerprints: BTreeMap<String, String>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl ModelBundle {
    pub fn new<'a>(model: Model, schemas: impl IntoIterator<Item = &'a ValidSchema>) -> Self {
        let schema_fingerprints = schemas
            .into_iter()
            .map(|s| (s.task().to_string(), s.graph().fingerprint()))
            .collect();
        Self {
            format_version: BUNDLE_FORMAT_VERSION,
            model,
            schema_fingerprints,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    pub fn from_json(src: &str) -> Result<Self, ModelError> {
        let v: serde_json::Value =
            serde_json::from_str(src).map_err(|e| ModelError::Format(e.to_string()))?;
        let version = v.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(BUNDLE_FORMAT_VERSION)) {
            return Err(ModelError::Format(format!(
                "unsupported format version {version:?}, expected {BUNDLE_FORMAT_VERSION}"
            )));
        }
        let b: Self = serde_json::from_value(v).map_err(|e| ModelError::Format(e.to_string()))?;
        b.model.check()?;
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fails if `schema`'s task was trained with different content.
    pub fn check_schema(&self, schema: &ValidSchema) -> Result<(), ModelError> {
        match self.schema_fingerprints.get(schema.task()) {
            Some(f) if *f != schema.graph().fingerprint() => Err(ModelError::SchemaMismatch {
                task: schema.task().to_string(),
                trained: f.clone(),
                found: schema.graph().fingerprint(),
            }),
            _ => Ok(()),
        }
    }
}
