use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use sde_core::corpus::{DialogContext, Turn};
use sde_core::model::Model;
use sde_core::model::{ModelBundle, ModelError, PreparedSchema};
use sde_core::schema::{ActionId, SchemaRegistry, ValidSchema};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// File name of the model bundle inside the model directory.
pub const MODEL_FILE: &str = "model.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub action: ActionId,
    pub probability: f64,
    /// Response template of the action; absent for actions the task schema
    /// does not contain.
    pub template: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub node_id: String,
    pub node_text: String,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    /// The full distribution, most probable first.
    pub ranked: Vec<RankedEntry>,
    pub alignments: Vec<AlignmentEntry>,
    pub model_id: String,
    pub latency_ms: f64,
}

impl PredictResponse {
    pub fn top(&self) -> &RankedEntry {
        &self.ranked[0]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub task: String,
    pub domain: String,
}

/// A loaded model with every registered schema prepared for it. Immutable
/// once built.
pub struct Engine {
    model: Model,
    model_id: String,
    registry: SchemaRegistry,
    prepared: BTreeMap<String, PreparedSchema>,
}

impl Engine {
    /// Fails when a registered schema differs from the one the model was
    /// trained with.
    pub fn new(bundle: ModelBundle, registry: SchemaRegistry) -> Result<Self, ModelError> {
        let model_id = bundle
            .metadata
            .get("model_id")
            .and_then(serde_json::Value::as_str)
            .map_or_else(|| bundle.model.kind.to_string(), str::to_string);
        let mut prepared = BTreeMap::new();
        for schema in registry.schemas() {
            bundle.check_schema(schema)?;
            prepared.insert(
                schema.task().to_string(),
                bundle.model.prepare_schema(schema)?,
            );
        }
        Ok(Self {
            model: bundle.model,
            model_id,
            registry,
            prepared,
        })
    }

    /// Loads `model_dir/model.json` and every schema file in `schema_dir`.
    pub fn load(model_dir: &Path, schema_dir: &Path) -> Result<Self, ApiError> {
        let bundle = ModelBundle::load(model_dir.join(MODEL_FILE)).map_err(|e| {
            ApiError::Internal(format!(
                "loading {}: {e}",
                model_dir.join(MODEL_FILE).display()
            ))
        })?;
        let registry = SchemaRegistry::load_dir(schema_dir).map_err(|e| {
            ApiError::Internal(format!(
                "loading schemas from {}: {e}",
                schema_dir.display()
            ))
        })?;
        Ok(Self::new(bundle, registry)?)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn tasks(&self) -> Vec<TaskInfo> {
        self.registry
            .schemas()
            .map(|s| TaskInfo {
                task: s.task().to_string(),
                domain: s.domain().to_string(),
            })
            .collect()
    }

    pub fn schema(&self, task: &str) -> Result<&ValidSchema, ApiError> {
        self.registry
            .get(task)
            .ok_or_else(|| self.unknown_task(task))
    }

    fn unknown_task(&self, task: &str) -> ApiError {
        ApiError::UnknownTask {
            task: task.to_string(),
            available: self.registry.tasks().map(str::to_string).collect(),
        }
    }

    pub fn predict(&self, task: &str, history: &[Turn]) -> Result<PredictResponse, ApiError> {
        let start = Instant::now();
        let prepared = self
            .prepared
            .get(task)
            .ok_or_else(|| self.unknown_task(task))?;
        let prediction = self
            .model
            .predict(prepared, &DialogContext::new(history.to_vec()))?;
        let schema = &prepared.schema;
        let ranked = prediction
            .ranked
            .into_iter()
            .map(|r| RankedEntry {
                template: schema.template(&r.action).map(str::to_string),
                action: r.action,
                probability: r.probability,
            })
            .collect();
        let alignments = prediction
            .alignments
            .into_iter()
            .map(|a| AlignmentEntry {
                node_id: a.node.to_string(),
                node_text: a.text,
                p: a.weight,
            })
            .collect();
        Ok(PredictResponse {
            ranked,
            alignments,
            model_id: self.model_id.clone(),
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}
