use std::collections::HashSet;
use std::io::Read;

use super::{NodeKind, SchemaError, SchemaGraph};

/// Parses a schema file. Only structural parsing happens here; graph-level
/// rules are left to [`SchemaGraph::validate`].
pub fn load_schema(mut source: impl Read) -> Result<SchemaGraph, SchemaError> {
    let mut buf = String::new();
    source
        .read_to_string(&mut buf)
        .map_err(|e| SchemaError::Parse {
            line: 0,
            column: 0,
            message: format!("source is not UTF-8 text: {e}"),
        })?;
    load_schema_str(&buf)
}

pub fn load_schema_str(src: &str) -> Result<SchemaGraph, SchemaError> {
    let graph: SchemaGraph = serde_json::from_str(src).map_err(|e| SchemaError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut seen = HashSet::new();
    for node in &graph.nodes {
        let at = |message: String| {
            let (line, column) = locate_id(src, node.id.as_str(), 0);
            SchemaError::Parse {
                line,
                column,
                message,
            }
        };
        if node.id.as_str().is_empty() {
            return Err(at("node id must be non-empty".into()));
        }
        if !seen.insert(node.id.clone()) {
            let (line, column) = locate_id(src, node.id.as_str(), 1);
            return Err(SchemaError::Parse {
                line,
                column,
                message: format!("duplicate node id `{}`", node.id),
            });
        }
        if node.text.trim().is_empty() {
            return Err(at(format!("node `{}` has empty text", node.id)));
        }
        match (node.kind, &node.action) {
            (NodeKind::SystemResponse, None) => {
                return Err(at(format!(
                    "system node `{}` is missing required field `action`",
                    node.id
                )))
            }
            (NodeKind::SystemResponse, Some(a)) if a.as_str().is_empty() => {
                return Err(at(format!("system node `{}` has an empty action", node.id)))
            }
            (NodeKind::UserUtterance | NodeKind::DatabaseResponse, Some(_)) => {
                return Err(at(format!(
                    "only system nodes carry an action (node `{}`)",
                    node.id
                )))
            }
            _ => {}
        }
    }
    Ok(graph)
}

/// Canonical serialization: fixed key order, two-space indentation, trailing
/// newline. Re-loading the output yields an identical graph.
pub fn to_canonical_json(graph: &SchemaGraph) -> String {
    let mut s = serde_json::to_string_pretty(graph).expect("schema graphs always serialize");
    s.push('\n');
    s
}

pub fn save_schema(
    graph: &SchemaGraph,
    path: impl AsRef<std::path::Path>,
) -> Result<(), SchemaError> {
    std::fs::write(path, to_canonical_json(graph))?;
    Ok(())
}

/// Line/column (1-based) of the `nth` `"id": "<id>"` pair in `src`.
fn locate_id(src: &str, id: &str, nth: usize) -> (usize, usize) {
    let needle = format!("\"{id}\"");
    let mut found = 0;
    let mut search_from = 0;
    while let Some(rel) = src[search_from..].find("\"id\"") {
        let key_at = search_from + rel;
        let rest = src[key_at + 4..].trim_start();
        if let Some(after_colon) = rest.strip_prefix(':') {
            if after_colon.trim_start().starts_with(&needle) {
                if found == nth {
                    return line_col(src, key_at);
                }
                found += 1;
            }
        }
        search_from = key_at + 4;
    }
    (0, 0)
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let column = offset - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}
