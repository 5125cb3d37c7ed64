//! Graph persistence: a single versioned JSON document with sections for
//! chunks, entities, edges, modules and gates. Embeddings round-trip at full
//! precision (serde_json is built with `float_roundtrip`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{GraphError, KnowledgeGraph};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GraphFile {
    schema_version: u32,
    /// Resolved pipeline configuration captured at build time, for provenance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<Value>,
    graph: KnowledgeGraph,
}

/// Writes `graph` (plus an optional provenance config blob) as pretty JSON.
pub fn save_graph(
    graph: &KnowledgeGraph,
    config: Option<&Value>,
    path: &Path,
) -> Result<(), GraphError> {
    let file = GraphFile {
        schema_version: SCHEMA_VERSION,
        config: config.cloned(),
        graph: graph.clone(),
    };
    let body = serde_json::to_string_pretty(&file).expect("graph serialization cannot fail");
    fs::write(path, body)?;
    Ok(())
}

/// Loads a graph file, checking the schema version first. Parse failures
/// report the byte offset of the error.
pub fn load_graph(path: &Path) -> Result<(KnowledgeGraph, Option<Value>), GraphError> {
    let raw = fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&raw).map_err(|e| parse_error(&raw, &e))?;
    let found = value
        .get("schema_version")
        .and_then(Value::as_u64)
        .unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(GraphError::VersionMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let file: GraphFile = serde_json::from_value(value).map_err(|e| GraphError::Parse {
        offset: 0,
        message: e.to_string(),
    })?;
    let mut graph = file.graph;
    graph.rebuild_adjacency();
    Ok((graph, file.config))
}

fn parse_error(raw: &str, err: &serde_json::Error) -> GraphError {
    GraphError::Parse {
        offset: byte_offset(raw, err.line(), err.column()),
        message: err.to_string(),
    }
}

/// serde_json reports 1-based line and column; convert back to a byte offset.
fn byte_offset(raw: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0usize;
    for (i, l) in raw.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len() + 1;
    }
    raw.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeKind, EntityNode, ModuleNode, NodeId, RelationEdge};
    use std::collections::BTreeSet;

    fn sample_graph() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new(3);
        for (i, id) in ["a", "b"].iter().enumerate() {
            let mut emb = vec![0.0f32; 3];
            emb[i] = 1.0;
            g.add_entity(EntityNode {
                id: NodeId::new(*id),
                name: id.to_string(),
                description: format!("desc {id}"),
                aliases: BTreeSet::new(),
                source_chunks: ["c0".to_string()].into_iter().collect(),
                embedding: emb,
            })
            .unwrap();
        }
        g.add_module(ModuleNode {
            id: NodeId::new("m1:0"),
            level: 1,
            member_ids: [NodeId::new("a"), NodeId::new("b")].into_iter().collect(),
            summary: "a and b".into(),
            summary_embedding: vec![0.0, 0.0, 1.0],
            fallback_summary: false,
        })
        .unwrap();
        g.add_edge(RelationEdge {
            src: NodeId::new("a"),
            dst: NodeId::new("b"),
            description: "relates".into(),
            kind: EdgeKind::Structural,
            weight_hint: 2.0,
        })
        .unwrap();
        g.add_edge(RelationEdge {
            src: NodeId::new("m1:0"),
            dst: NodeId::new("a"),
            description: String::new(),
            kind: EdgeKind::Hierarchical,
            weight_hint: 1.0,
        })
        .unwrap();
        g
    }

    #[test]
    fn empty_graph_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let g = KnowledgeGraph::new(8);
        save_graph(&g, None, &path).unwrap();
        let (loaded, cfg) = load_graph(&path).unwrap();
        assert_eq!(g, loaded);
        assert!(cfg.is_none());
    }

    #[test]
    fn fixture_graph_round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let mut g = sample_graph();
        // Exercise all three edge kinds plus gate provenance.
        g.add_edge(RelationEdge {
            src: NodeId::new("a"),
            dst: NodeId::new("b"),
            description: "gate".into(),
            kind: EdgeKind::CausalGate,
            weight_hint: 1.0,
        })
        .unwrap();
        g.gates.push(crate::graph::GateProvenance {
            src: NodeId::new("a"),
            dst: NodeId::new("b"),
            score: 1.0,
            direction: "forward".into(),
            transcript_ref: "deadbeef".into(),
        });
        save_graph(&g, Some(&serde_json::json!({"k": 1})), &path).unwrap();
        let (loaded, cfg) = load_graph(&path).unwrap();
        assert_eq!(g, loaded);
        assert_eq!(cfg, Some(serde_json::json!({"k": 1})));
        // Saving the loaded graph reproduces the file byte for byte.
        let path2 = dir.path().join("g2.json");
        save_graph(&loaded, Some(&serde_json::json!({"k": 1})), &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        std::fs::write(&path, r#"{"schema_version": 99, "graph": {}}"#).unwrap();
        match load_graph(&path) {
            Err(GraphError::VersionMismatch { found, expected }) => {
                assert_eq!(found, 99);
                assert_eq!(expected, SCHEMA_VERSION);
            }
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_file_reports_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let body = "{\"schema_version\": 1,\n  \"graph\": !}";
        std::fs::write(&path, body).unwrap();
        match load_graph(&path) {
            Err(GraphError::Parse { offset, .. }) => {
                assert_eq!(body.as_bytes()[offset], b'!');
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
