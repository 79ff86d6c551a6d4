//! Task-schema graphs: the explicit dialog policy a model aligns against.
//!
//! A [`SchemaGraph`] is what comes off disk. [`validate`](SchemaGraph::validate)
//! reports every structural problem, and [`ValidSchema::new`] is the only way
//! to obtain the queryable form used by models (candidate nodes, node texts,
//! next actions).

mod graph;
mod io;
mod registry;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use graph::{NodeText, ValidSchema, SYSTEM_ONLY_PLACEHOLDER};
pub use io::{load_schema, load_schema_str, save_schema, to_canonical_json};
pub use registry::SchemaRegistry;
pub use validate::{Diagnostic, Locus, Severity, ValidationReport};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Canonical system-action name, e.g. `ask_date_of_birth`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub String);

impl ActionId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "system")]
    SystemResponse,
    #[serde(rename = "user")]
    UserUtterance,
    #[serde(rename = "db")]
    DatabaseResponse,
}

impl NodeKind {
    /// User and database nodes are the ones a dialog is aligned to.
    pub fn is_candidate(self) -> bool {
        !matches!(self, NodeKind::SystemResponse)
    }

    /// Speaker tag used in serialized node and context text.
    pub fn tag(self) -> &'static str {
        match self {
            NodeKind::SystemResponse => "[SYSTEM]",
            NodeKind::UserUtterance => "[USER]",
            NodeKind::DatabaseResponse => "[DB]",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionId>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    UserAware,
    SystemOnly,
}

/// A parsed schema. Structure is checked by [`SchemaGraph::validate`], not at
/// construction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaGraph {
    pub task: String,
    pub domain: String,
    #[serde(default)]
    pub variant: Variant,
    pub start: NodeId,
    pub nodes: Vec<SchemaNode>,
    pub edges: Vec<(NodeId, NodeId)>,
}

impl SchemaGraph {
    pub fn node(&self, id: &NodeId) -> Option<&SchemaNode> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn validate(&self) -> ValidationReport {
        validate::validate(self)
    }

    /// Stable content hash of the canonical serialization.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(to_canonical_json(self).as_bytes());
        hex::encode(h.finalize())[..16].to_string()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("schema parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema for task `{task}` is invalid: {}", report.summary())]
    InvalidGraph {
        task: String,
        report: ValidationReport,
    },
    #[error("node `{0}` is not a user or database node")]
    NotCandidateNode(NodeId),
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
