use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ActionId, NodeId, NodeKind, SchemaError, SchemaGraph, Variant};

/// Text substituted for non-branching user nodes in the system-only variant.
pub const SYSTEM_ONLY_PLACEHOLDER: &str = "[USER_TURN]";

/// Serialized text of a candidate node: its predecessor system text followed
/// by its own text, each behind a speaker tag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeText {
    pub node: NodeId,
    pub text: String,
}

/// A schema that passed validation, with the adjacency needed for alignment
/// precomputed. Immutable; share it freely.
#[derive(Clone, Debug)]
pub struct ValidSchema {
    graph: SchemaGraph,
    index: HashMap<NodeId, usize>,
    candidates: Vec<usize>,
    prev: HashMap<usize, usize>,
    next: HashMap<usize, usize>,
}

impl ValidSchema {
    pub fn new(graph: SchemaGraph) -> Result<Self, SchemaError> {
        let report = graph.validate();
        if !report.ok {
            return Err(SchemaError::InvalidGraph {
                task: graph.task.clone(),
                report,
            });
        }
        let index: HashMap<NodeId, usize> = graph
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let mut prev = HashMap::new();
        let mut next = HashMap::new();
        for (from, to) in &graph.edges {
            let (f, t) = (index[from], index[to]);
            if graph.nodes[f].kind.is_candidate() {
                next.insert(f, t);
            }
            if graph.nodes[t].kind.is_candidate() {
                prev.insert(t, f);
            }
        }
        let candidates = (0..graph.nodes.len())
            .filter(|&i| graph.nodes[i].kind.is_candidate())
            .collect();
        Ok(Self {
            graph,
            index,
            candidates,
            prev,
            next,
        })
    }

    pub fn graph(&self) -> &SchemaGraph {
        &self.graph
    }

    pub fn into_graph(self) -> SchemaGraph {
        self.graph
    }

    pub fn task(&self) -> &str {
        &self.graph.task
    }

    pub fn domain(&self) -> &str {
        &self.graph.domain
    }

    pub fn variant(&self) -> Variant {
        self.graph.variant
    }

    /// User and database nodes in document order.
    pub fn candidate_nodes(&self) -> Vec<NodeId> {
        self.candidates
            .iter()
            .map(|&i| self.graph.nodes[i].id.clone())
            .collect()
    }

    fn candidate_index(&self, node: &NodeId) -> Result<usize, SchemaError> {
        let &i = self
            .index
            .get(node)
            .ok_or_else(|| SchemaError::UnknownNode(node.clone()))?;
        if !self.graph.nodes[i].kind.is_candidate() {
            return Err(SchemaError::NotCandidateNode(node.clone()));
        }
        Ok(i)
    }

    pub fn node_text_repr(&self, node: &NodeId) -> Result<NodeText, SchemaError> {
        let i = self.candidate_index(node)?;
        let own = &self.graph.nodes[i];
        let text = match self.prev.get(&i) {
            Some(&p) => {
                let prev = &self.graph.nodes[p];
                format!(
                    "{} {} {} {}",
                    prev.kind.tag(),
                    prev.text,
                    own.kind.tag(),
                    own.text
                )
            }
            None => format!("{} {}", own.kind.tag(), own.text),
        };
        Ok(NodeText {
            node: node.clone(),
            text,
        })
    }

    pub fn next_action(&self, node: &NodeId) -> Result<ActionId, SchemaError> {
        let i = self.candidate_index(node)?;
        let succ = &self.graph.nodes[self.next[&i]];
        Ok(succ
            .action
            .clone()
            .expect("validated successor is a system node"))
    }

    /// Every system action the schema can emit, in document order.
    pub fn actions(&self) -> Vec<ActionId> {
        let mut out: Vec<ActionId> = Vec::new();
        for n in &self.graph.nodes {
            if let Some(a) = &n.action {
                if !out.contains(a) {
                    out.push(a.clone());
                }
            }
        }
        out
    }

    /// Template text of a system action.
    pub fn template(&self, action: &ActionId) -> Option<&str> {
        self.graph
            .nodes
            .iter()
            .find(|n| n.action.as_ref() == Some(action))
            .map(|n| n.text.as_str())
    }

    pub fn start_node(&self) -> &super::SchemaNode {
        &self.graph.nodes[self.index[&self.graph.start]]
    }

    /// Candidate nodes whose successor emits `action`.
    pub fn nodes_for_action(&self, action: &ActionId) -> Vec<NodeId> {
        self.candidates
            .iter()
            .filter(|&&i| self.graph.nodes[self.next[&i]].action.as_ref() == Some(action))
            .map(|&i| self.graph.nodes[i].id.clone())
            .collect()
    }

    /// Whether `action` is followed by a database node (a query action).
    pub fn is_query_action(&self, action: &ActionId) -> bool {
        self.graph.edges.iter().any(|(from, to)| {
            let f = &self.graph.nodes[self.index[from]];
            let t = &self.graph.nodes[self.index[to]];
            f.action.as_ref() == Some(action) && t.kind == NodeKind::DatabaseResponse
        })
    }

    /// First database node following `action`, if any.
    pub fn db_response_for(&self, action: &ActionId) -> Option<&super::SchemaNode> {
        self.graph.edges.iter().find_map(|(from, to)| {
            let f = &self.graph.nodes[self.index[from]];
            let t = &self.graph.nodes[self.index[to]];
            (f.action.as_ref() == Some(action) && t.kind == NodeKind::DatabaseResponse).then_some(t)
        })
    }

    /// Legacy representation in which user nodes keep their text only at
    /// branch points (a system node with two or more user children). Structure
    /// and actions are unchanged.
    pub fn to_system_only(&self) -> ValidSchema {
        let mut user_children: HashMap<usize, usize> = HashMap::new();
        for &i in &self.candidates {
            if self.graph.nodes[i].kind == NodeKind::UserUtterance {
                if let Some(&p) = self.prev.get(&i) {
                    *user_children.entry(p).or_default() += 1;
                }
            }
        }
        let mut graph = self.graph.clone();
        graph.variant = Variant::SystemOnly;
        for &i in &self.candidates {
            let node = &mut graph.nodes[i];
            if node.kind != NodeKind::UserUtterance {
                continue;
            }
            let branch = self.prev.get(&i).is_some_and(|p| user_children[p] >= 2);
            if !branch {
                node.text = SYSTEM_ONLY_PLACEHOLDER.to_string();
            }
        }
        ValidSchema::new(graph).expect("text substitution preserves validity")
    }
}
