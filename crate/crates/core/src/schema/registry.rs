use std::collections::BTreeMap;
use std::path::Path;

use super::{load_schema, SchemaError, SchemaGraph, ValidSchema};

/// Validated schemas keyed by task id.
#[derive(Clone, Debug, Default)]
pub struct SchemaRegistry {
    by_task: BTreeMap<String, ValidSchema>,
}

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_graphs(graphs: impl IntoIterator<Item = SchemaGraph>) -> Result<Self, SchemaError> {
        let mut reg = Self::new();
        for g in graphs {
            reg.insert(ValidSchema::new(g)?);
        }
        Ok(reg)
    }

    /// Loads every `*.json` file in `dir`, in file-name order.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut reg = Self::new();
        for p in paths {
            let graph = load_schema(std::fs::File::open(&p)?)?;
            reg.insert(ValidSchema::new(graph)?);
        }
        Ok(reg)
    }

    pub fn insert(&mut self, schema: ValidSchema) -> Option<ValidSchema> {
        self.by_task.insert(schema.task().to_string(), schema)
    }

    pub fn get(&self, task: &str) -> Option<&ValidSchema> {
        self.by_task.get(task)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &str> {
        self.by_task.keys().map(String::as_str)
    }

    pub fn schemas(&self) -> impl Iterator<Item = &ValidSchema> {
        self.by_task.values()
    }

    pub fn len(&self) -> usize {
        self.by_task.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_task.is_empty()
    }

    /// Same registry with every schema replaced by its system-only variant.
    pub fn to_system_only(&self) -> Self {
        Self {
            by_task: self
                .by_task
                .iter()
                .map(|(k, s)| (k.clone(), s.to_system_only()))
                .collect(),
        }
    }
}
