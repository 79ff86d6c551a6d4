use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ActionId, NodeId, NodeKind, SchemaGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "at")]
pub enum Locus {
    Graph,
    Node(NodeId),
    Edge(NodeId, NodeId),
}

impl fmt::Display for Locus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Locus::Graph => f.write_str("graph"),
            Locus::Node(n) => write!(f, "node `{n}`"),
            Locus::Edge(a, b) => write!(f, "edge `{a}` -> `{b}`"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub locus: Locus,
    pub rule: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Error)
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.diagnostics.iter().any(|d| d.rule == rule)
    }

    pub fn summary(&self) -> String {
        let msgs: Vec<String> = self
            .errors()
            .map(|d| format!("[{}] {}: {}", d.rule, d.locus, d.message))
            .collect();
        if msgs.is_empty() {
            "ok".into()
        } else {
            msgs.join("; ")
        }
    }
}

pub const RULE_OUTGOING: &str = "determinism/outgoing";
pub const RULE_INCOMING: &str = "determinism/incoming";
pub const RULE_BIJECTION: &str = "action-template-bijection";
pub const RULE_CONNECTIVITY: &str = "connectivity";
pub const RULE_DANGLING: &str = "dangling-edge";
pub const RULE_START: &str = "start-node";
pub const RULE_NO_CANDIDATES: &str = "no-candidate-nodes";

pub(super) fn validate(g: &SchemaGraph) -> ValidationReport {
    let mut diags = Vec::new();
    let mut push = |severity, locus, rule: &str, message: String| {
        diags.push(Diagnostic {
            severity,
            locus,
            rule: rule.to_string(),
            message,
        });
    };

    let kinds: HashMap<&NodeId, NodeKind> = g.nodes.iter().map(|n| (&n.id, n.kind)).collect();

    if !kinds.contains_key(&g.start) {
        push(
            Severity::Error,
            Locus::Graph,
            RULE_START,
            format!("start node `{}` does not exist", g.start),
        );
    }

    let mut out_edges: HashMap<&NodeId, Vec<&NodeId>> = HashMap::new();
    let mut in_edges: HashMap<&NodeId, Vec<&NodeId>> = HashMap::new();
    for (from, to) in &g.edges {
        let mut dangling = false;
        for end in [from, to] {
            if !kinds.contains_key(end) {
                dangling = true;
                push(
                    Severity::Error,
                    Locus::Edge(from.clone(), to.clone()),
                    RULE_DANGLING,
                    format!("edge endpoint `{end}` is not a node"),
                );
            }
        }
        if !dangling {
            out_edges.entry(from).or_default().push(to);
            in_edges.entry(to).or_default().push(from);
        }
    }

    for node in &g.nodes {
        if !node.kind.is_candidate() {
            continue;
        }
        let outs = out_edges.get(&node.id).map_or(&[][..], Vec::as_slice);
        if outs.len() != 1 {
            push(
                Severity::Error,
                Locus::Node(node.id.clone()),
                RULE_OUTGOING,
                format!("expected exactly one outgoing edge, found {}", outs.len()),
            );
        } else if kinds[outs[0]] != NodeKind::SystemResponse {
            push(
                Severity::Error,
                Locus::Node(node.id.clone()),
                RULE_OUTGOING,
                format!(
                    "outgoing edge must reach a system node, reaches `{}`",
                    outs[0]
                ),
            );
        }

        let ins = in_edges.get(&node.id).map_or(&[][..], Vec::as_slice);
        // A user/db start node opens the dialog and has no predecessor.
        let expected_in = usize::from(node.id != g.start);
        if ins.len() != expected_in {
            push(
                Severity::Error,
                Locus::Node(node.id.clone()),
                RULE_INCOMING,
                format!(
                    "expected {expected_in} incoming edge(s), found {}",
                    ins.len()
                ),
            );
        } else if let Some(src) = ins.first() {
            if kinds[*src] != NodeKind::SystemResponse {
                push(
                    Severity::Error,
                    Locus::Node(node.id.clone()),
                    RULE_INCOMING,
                    format!("incoming edge must come from a system node, comes from `{src}`"),
                );
            }
        }
    }

    let mut template_of: BTreeMap<&ActionId, (&NodeId, &str)> = BTreeMap::new();
    let mut action_of: BTreeMap<&str, (&NodeId, &ActionId)> = BTreeMap::new();
    for node in &g.nodes {
        let Some(action) = &node.action else { continue };
        if let Some((other, tpl)) = template_of.get(action) {
            if *tpl != node.text {
                push(
                    Severity::Error,
                    Locus::Node(node.id.clone()),
                    RULE_BIJECTION,
                    format!("action `{action}` already has a different template on node `{other}`"),
                );
            }
        } else {
            template_of.insert(action, (&node.id, &node.text));
        }
        if let Some((other, act)) = action_of.get(node.text.as_str()) {
            if *act != action {
                push(
                    Severity::Error,
                    Locus::Node(node.id.clone()),
                    RULE_BIJECTION,
                    format!("template already maps to action `{act}` on node `{other}`"),
                );
            }
        } else {
            action_of.insert(&node.text, (&node.id, action));
        }
    }

    if kinds.contains_key(&g.start) {
        let mut seen: HashSet<&NodeId> = HashSet::new();
        let mut queue = VecDeque::from([&g.start]);
        seen.insert(&g.start);
        while let Some(n) = queue.pop_front() {
            for next in out_edges.get(n).into_iter().flatten() {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        for node in &g.nodes {
            if !seen.contains(&node.id) {
                push(
                    Severity::Error,
                    Locus::Node(node.id.clone()),
                    RULE_CONNECTIVITY,
                    format!("not reachable from start node `{}`", g.start),
                );
            }
        }
    }

    if !g.nodes.iter().any(|n| n.kind.is_candidate()) {
        push(
            Severity::Warning,
            Locus::Graph,
            RULE_NO_CANDIDATES,
            "graph has no user or database nodes; nothing can be aligned".into(),
        );
    }

    let ok = !diags.iter().any(|d| d.severity == Severity::Error);
    ValidationReport {
        ok,
        diagnostics: diags,
    }
}
