//! Layered knowledge graph: entity layer plus module layers, typed edges,
//! canonicalization and persistence.

mod canonicalize;
mod persist;

pub use canonicalize::{canonicalize_entities, normalized_name_similarity, CanonicalizationResult};
pub(crate) use canonicalize::normalize_name;
pub use persist::{load_graph, save_graph, SCHEMA_VERSION};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown node id: {0}")]
    UnknownNode(NodeId),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate node id: {0}")]
    DuplicateNode(NodeId),
    #[error("invalid edge {src} -> {dst}: {reason}")]
    InvalidEdge {
        src: NodeId,
        dst: NodeId,
        reason: String,
    },
    #[error("graph invariant violated: {0}")]
    InvariantViolation(String),
    #[error("unsupported graph schema version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("graph file parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("graph file io: {0}")]
    Io(#[from] std::io::Error),
}

/// Opaque node identifier, unique within one graph across entities and modules.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
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

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// Which of the three edge populations an edge belongs to. The three sets are
/// disjoint by construction: every edge carries exactly one kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Structural,
    Hierarchical,
    CausalGate,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 3] = [
        EdgeKind::Structural,
        EdgeKind::Hierarchical,
        EdgeKind::CausalGate,
    ];
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EdgeKind::Structural => "structural",
            EdgeKind::Hierarchical => "hierarchical",
            EdgeKind::CausalGate => "causal_gate",
        };
        f.write_str(s)
    }
}

/// A contiguous slice of a source document. Spans are in characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    pub text: String,
    pub char_span: (usize, usize),
}

/// A canonicalized entity in the base layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: NodeId,
    pub name: String,
    pub description: String,
    pub aliases: BTreeSet<String>,
    pub source_chunks: BTreeSet<String>,
    pub embedding: Vec<f32>,
}

/// A community of lower-level nodes produced by partitioning, with a summary
/// acting as its coarse-grained semantic anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleNode {
    pub id: NodeId,
    pub level: u32,
    pub member_ids: BTreeSet<NodeId>,
    pub summary: String,
    pub summary_embedding: Vec<f32>,
    /// True when the summarizer failed and the summary is a concatenation of
    /// member texts instead.
    #[serde(default)]
    pub fallback_summary: bool,
}

/// Typed edge. Direction is retained as metadata; traversal and distance
/// computations treat every kind as bidirectional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub description: String,
    pub kind: EdgeKind,
    pub weight_hint: f64,
}

/// Verification provenance attached to an installed causal gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateProvenance {
    pub src: NodeId,
    pub dst: NodeId,
    pub score: f64,
    pub direction: String,
    pub transcript_ref: String,
}

/// The multi-layer knowledge graph. Level 0 holds entities, levels 1..=L hold
/// modules. Immutable once construction finishes; queries only read.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub chunks: BTreeMap<String, Chunk>,
    pub entities: BTreeMap<NodeId, EntityNode>,
    pub modules: BTreeMap<NodeId, ModuleNode>,
    pub edges: Vec<RelationEdge>,
    pub gates: Vec<GateProvenance>,
    pub level_count: u32,
    pub embedding_dim: usize,
    #[serde(skip)]
    adjacency: BTreeMap<NodeId, Vec<usize>>,
}

impl PartialEq for KnowledgeGraph {
    /// Structural equality over the persisted fields; the derived adjacency
    /// index is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.chunks == other.chunks
            && self.entities == other.entities
            && self.modules == other.modules
            && self.edges == other.edges
            && self.gates == other.gates
            && self.level_count == other.level_count
            && self.embedding_dim == other.embedding_dim
    }
}

impl KnowledgeGraph {
    pub fn new(embedding_dim: usize) -> Self {
        KnowledgeGraph {
            embedding_dim,
            ..Default::default()
        }
    }

    pub fn contains_node(&self, id: &NodeId) -> bool {
        self.entities.contains_key(id) || self.modules.contains_key(id)
    }

    /// Level of a node: 0 for entities, the stored level for modules.
    pub fn node_level(&self, id: &NodeId) -> Option<u32> {
        if self.entities.contains_key(id) {
            Some(0)
        } else {
            self.modules.get(id).map(|m| m.level)
        }
    }

    /// Node ids at one hierarchy level, in id order.
    pub fn nodes_at_level(&self, level: u32) -> Vec<NodeId> {
        if level == 0 {
            self.entities.keys().cloned().collect()
        } else {
            self.modules
                .values()
                .filter(|m| m.level == level)
                .map(|m| m.id.clone())
                .collect()
        }
    }

    pub fn node_count(&self) -> usize {
        self.entities.len() + self.modules.len()
    }

    pub fn add_chunk(&mut self, chunk: Chunk) {
        self.chunks.insert(chunk.id.clone(), chunk);
    }

    pub fn add_entity(&mut self, entity: EntityNode) -> Result<(), GraphError> {
        if self.contains_node(&entity.id) {
            return Err(GraphError::DuplicateNode(entity.id));
        }
        if entity.embedding.len() != self.embedding_dim {
            return Err(GraphError::DimensionMismatch {
                expected: self.embedding_dim,
                got: entity.embedding.len(),
            });
        }
        self.entities.insert(entity.id.clone(), entity);
        Ok(())
    }

    pub fn add_module(&mut self, module: ModuleNode) -> Result<(), GraphError> {
        if self.contains_node(&module.id) {
            return Err(GraphError::DuplicateNode(module.id));
        }
        if module.summary_embedding.len() != self.embedding_dim {
            return Err(GraphError::DimensionMismatch {
                expected: self.embedding_dim,
                got: module.summary_embedding.len(),
            });
        }
        self.level_count = self.level_count.max(module.level);
        self.modules.insert(module.id.clone(), module);
        Ok(())
    }

    pub fn add_edge(&mut self, edge: RelationEdge) -> Result<(), GraphError> {
        if !self.contains_node(&edge.src) {
            return Err(GraphError::UnknownNode(edge.src));
        }
        if !self.contains_node(&edge.dst) {
            return Err(GraphError::UnknownNode(edge.dst));
        }
        if edge.kind == EdgeKind::Structural && edge.src == edge.dst {
            return Err(GraphError::InvalidEdge {
                src: edge.src,
                dst: edge.dst,
                reason: "structural self-loop".into(),
            });
        }
        if edge.kind == EdgeKind::Hierarchical {
            let ls = self.node_level(&edge.src).unwrap_or(0);
            let ld = self.node_level(&edge.dst).unwrap_or(0);
            if ls != ld + 1 {
                return Err(GraphError::InvalidEdge {
                    src: edge.src,
                    dst: edge.dst,
                    reason: format!("hierarchical edge must span adjacent levels, got {ls} -> {ld}"),
                });
            }
        }
        let idx = self.edges.len();
        self.adjacency.entry(edge.src.clone()).or_default().push(idx);
        self.adjacency.entry(edge.dst.clone()).or_default().push(idx);
        self.edges.push(edge);
        Ok(())
    }

    /// Removes every causal-gate edge (and its provenance). Used when a gate
    /// build replaces a previous gate set.
    pub fn clear_gates(&mut self) {
        self.edges.retain(|e| e.kind != EdgeKind::CausalGate);
        self.gates.clear();
        self.rebuild_adjacency();
    }

    pub(crate) fn rebuild_adjacency(&mut self) {
        self.adjacency.clear();
        for (idx, edge) in self.edges.iter().enumerate() {
            self.adjacency.entry(edge.src.clone()).or_default().push(idx);
            self.adjacency.entry(edge.dst.clone()).or_default().push(idx);
        }
    }

    /// Incident edges of `node` whose kind is allowed, as
    /// `(neighbor, edge index)` pairs in deterministic order: by neighbor id,
    /// then edge index. Self-loops surface once.
    pub fn neighbors(
        &self,
        node: &NodeId,
        allowed_kinds: &BTreeSet<EdgeKind>,
    ) -> Result<Vec<(NodeId, usize)>, GraphError> {
        if !self.contains_node(node) {
            return Err(GraphError::UnknownNode(node.clone()));
        }
        let mut out: Vec<(NodeId, usize)> = Vec::new();
        if let Some(indices) = self.adjacency.get(node) {
            for &idx in indices {
                let edge = &self.edges[idx];
                if !allowed_kinds.contains(&edge.kind) {
                    continue;
                }
                let other = if edge.src == *node { &edge.dst } else { &edge.src };
                out.push((other.clone(), idx));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        out.dedup();
        Ok(out)
    }

    /// Shortest undirected hop distance between two node sets over the allowed
    /// edge kinds. Returns `None` when no path exists, `Some(0)` when the sets
    /// intersect.
    pub fn min_hops(
        &self,
        from: &BTreeSet<NodeId>,
        to: &BTreeSet<NodeId>,
        allowed_kinds: &BTreeSet<EdgeKind>,
    ) -> Result<Option<u32>, GraphError> {
        for id in from.iter().chain(to.iter()) {
            if !self.contains_node(id) {
                return Err(GraphError::UnknownNode(id.clone()));
            }
        }
        if from.iter().any(|id| to.contains(id)) {
            return Ok(Some(0));
        }
        let mut dist: BTreeMap<&NodeId, u32> = BTreeMap::new();
        let mut queue: VecDeque<&NodeId> = VecDeque::new();
        for id in from {
            dist.insert(id, 0);
            queue.push_back(id);
        }
        while let Some(u) = queue.pop_front() {
            let d = dist[u];
            if let Some(indices) = self.adjacency.get(u) {
                for &idx in indices {
                    let edge = &self.edges[idx];
                    if !allowed_kinds.contains(&edge.kind) {
                        continue;
                    }
                    let v = if edge.src == *u { &edge.dst } else { &edge.src };
                    if dist.contains_key(v) {
                        continue;
                    }
                    if to.contains(v) {
                        return Ok(Some(d + 1));
                    }
                    dist.insert(v, d + 1);
                    queue.push_back(v);
                }
            }
        }
        Ok(None)
    }

    /// Parent module of a node (the module one level up whose member set
    /// contains it).
    pub fn parent_module(&self, id: &NodeId) -> Option<&ModuleNode> {
        self.modules.values().find(|m| m.member_ids.contains(id))
    }

    /// Chain of ancestor module ids from the node's parent up to the top level.
    pub fn ancestors(&self, id: &NodeId) -> Vec<NodeId> {
        let mut chain = Vec::new();
        let mut cur = id.clone();
        while let Some(parent) = self.parent_module(&cur) {
            chain.push(parent.id.clone());
            cur = parent.id.clone();
        }
        chain
    }

    /// Text used for scoring, budgets and linearization.
    pub fn node_text(&self, id: &NodeId) -> Option<String> {
        if let Some(e) = self.entities.get(id) {
            if e.description.is_empty() {
                Some(e.name.clone())
            } else {
                Some(format!("{} - {}", e.name, e.description))
            }
        } else {
            self.modules.get(id).map(|m| m.summary.clone())
        }
    }

    pub fn node_embedding(&self, id: &NodeId) -> Option<&[f32]> {
        if let Some(e) = self.entities.get(id) {
            Some(&e.embedding)
        } else {
            self.modules.get(id).map(|m| m.summary_embedding.as_slice())
        }
    }

    /// Checks the structural invariants: unit-norm embeddings, referential
    /// integrity of edges, the partition property at every level, and
    /// disjointness of the three edge populations.
    pub fn validate(&self) -> Result<(), GraphError> {
        for entity in self.entities.values() {
            let norm = l2_norm(&entity.embedding);
            if (norm - 1.0).abs() > 1e-6 {
                return Err(GraphError::InvariantViolation(format!(
                    "entity {} embedding norm {norm} not unit",
                    entity.id
                )));
            }
            if entity.source_chunks.is_empty() {
                return Err(GraphError::InvariantViolation(format!(
                    "entity {} has no source chunks",
                    entity.id
                )));
            }
        }
        for edge in &self.edges {
            if !self.contains_node(&edge.src) || !self.contains_node(&edge.dst) {
                return Err(GraphError::InvariantViolation(format!(
                    "dangling edge {} -> {}",
                    edge.src, edge.dst
                )));
            }
        }
        // Partition property: at each level >= 1 the member sets are disjoint
        // and cover the level below.
        for level in 1..=self.level_count {
            let below: BTreeSet<NodeId> = self.nodes_at_level(level - 1).into_iter().collect();
            let mut seen: BTreeSet<NodeId> = BTreeSet::new();
            for module in self.modules.values().filter(|m| m.level == level) {
                for member in &module.member_ids {
                    if !below.contains(member) {
                        return Err(GraphError::InvariantViolation(format!(
                            "module {} member {} is not at level {}",
                            module.id,
                            member,
                            level - 1
                        )));
                    }
                    if !seen.insert(member.clone()) {
                        return Err(GraphError::InvariantViolation(format!(
                            "node {member} belongs to two modules at level {level}"
                        )));
                    }
                }
            }
            if seen != below {
                return Err(GraphError::InvariantViolation(format!(
                    "modules at level {level} do not cover level {}",
                    level - 1
                )));
            }
        }
        // A gate never parallels a hierarchical edge.
        let hier: BTreeSet<(NodeId, NodeId)> = self
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Hierarchical)
            .flat_map(|e| {
                [
                    (e.src.clone(), e.dst.clone()),
                    (e.dst.clone(), e.src.clone()),
                ]
            })
            .collect();
        for edge in self.edges.iter().filter(|e| e.kind == EdgeKind::CausalGate) {
            if hier.contains(&(edge.src.clone(), edge.dst.clone())) {
                return Err(GraphError::InvariantViolation(format!(
                    "gate {} -> {} parallels a hierarchical edge",
                    edge.src, edge.dst
                )));
            }
        }
        Ok(())
    }
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Cosine similarity in f64, 0.0 when either vector has zero magnitude.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len().min(b.len()) {
        let (x, y) = (a[i] as f64, b[i] as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = na.sqrt() * nb.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

/// Normalizes a vector to unit L2 norm in place. No-op on zero vectors.
pub fn normalize(v: &mut [f32]) {
    let norm = l2_norm(v);
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}
