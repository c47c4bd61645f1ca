//! `.archjson` documents: the on-disk form of an [`ArchGraph`].
//!
//! ```json
//! {"version": "1", "name": "...", "input_shape": [3, 32, 32],
//!  "nodes": [{"id": 0, "tag": "input"}, {"id": 1, "tag": "conv2d", "attrs": {...}}],
//!  "edges": [[0, 1, 0]], "input": 0, "output": 7}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::{ArchGraph, Edge, NodeId, NodeKind, TAGS};

pub const VERSION: &str = "1";
pub const EXTENSION: &str = "archjson";

#[derive(Serialize, Deserialize)]
struct Document {
    version: String,
    name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    provenance: String,
    input_shape: Vec<usize>,
    nodes: Vec<RawNode>,
    edges: Vec<(NodeId, NodeId, usize)>,
    input: NodeId,
    output: NodeId,
}

#[derive(Serialize, Deserialize)]
struct RawNode {
    id: NodeId,
    tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attrs: Option<Value>,
}

pub fn to_json(graph: &ArchGraph) -> String {
    let nodes = graph
        .nodes()
        .iter()
        .map(|(&id, kind)| {
            let v = serde_json::to_value(kind).expect("node kinds always serialize");
            RawNode {
                id,
                tag: kind.tag().to_string(),
                attrs: v.get("attrs").cloned(),
            }
        })
        .collect();
    let doc = Document {
        version: VERSION.into(),
        name: graph.name.clone(),
        provenance: graph.provenance.clone(),
        input_shape: graph.input_shape.clone(),
        nodes,
        edges: graph.edges().iter().map(|e| (e.src, e.dst, e.slot)).collect(),
        input: graph.input(),
        output: graph.output(),
    };
    serde_json::to_string_pretty(&doc).expect("documents always serialize")
}

/// Parse and validate a graph document.
pub fn from_json(text: &str) -> Result<ArchGraph> {
    let doc: Document = serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
    if doc.version != VERSION {
        return Err(Error::Version(doc.version));
    }
    let mut nodes = BTreeMap::new();
    for raw in doc.nodes {
        if !TAGS.contains(&raw.tag.as_str()) {
            return Err(Error::UnknownTag { id: raw.id, tag: raw.tag });
        }
        let mut obj = serde_json::Map::new();
        obj.insert("tag".into(), Value::String(raw.tag.clone()));
        if let Some(a) = raw.attrs {
            obj.insert("attrs".into(), a);
        }
        let kind: NodeKind = serde_json::from_value(Value::Object(obj))
            .map_err(|e| Error::Document(format!("node {}: bad {} attributes: {e}", raw.id, raw.tag)))?;
        if nodes.insert(raw.id, kind).is_some() {
            return Err(Error::Document(format!("duplicate node id {}", raw.id)));
        }
    }
    let edges = doc
        .edges
        .into_iter()
        .map(|(src, dst, slot)| Edge { src, dst, slot })
        .collect();
    let mut graph = ArchGraph::from_parts(doc.name, doc.input_shape, nodes, edges, doc.input, doc.output);
    graph.provenance = doc.provenance;
    graph.ensure_valid()?;
    Ok(graph)
}

pub fn read(path: impl AsRef<Path>) -> Result<ArchGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text).map_err(|e| match e {
        Error::Document(m) => Error::Document(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Write through a temporary sibling file and rename into place.
pub fn write_atomic(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write(path: impl AsRef<Path>, graph: &ArchGraph) -> Result<()> {
    write_atomic(path, &to_json(graph))
}
