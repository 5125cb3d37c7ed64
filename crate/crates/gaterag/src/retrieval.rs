//! Online retrieval: hybrid lexical/semantic scoring, diversity-aware seed
//! selection across hierarchy levels, and causally gated best-first
//! expansion over the unified edge space.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ExpansionConfig, HybridScoreConfig};
use crate::graph::{cosine, EdgeKind, KnowledgeGraph, NodeId};
use crate::provider::{EmbeddingProvider, ProviderError};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("seed node not in graph: {0}")]
    UnknownSeed(NodeId),
    #[error("no seeds selected (graph empty or budgets zero)")]
    NoSeeds,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Query-conditioned score for every node in the graph.
pub type ScoreMap = BTreeMap<NodeId, f64>;

pub(crate) fn lex_tokens(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Query-token containment: |tokens(q) ∩ tokens(x)| / |tokens(q)|.
pub fn lexical_overlap(query_tokens: &BTreeSet<String>, text: &str) -> f64 {
    if query_tokens.is_empty() {
        return 0.0;
    }
    let candidate = lex_tokens(text);
    let hits = query_tokens.iter().filter(|t| candidate.contains(*t)).count();
    hits as f64 / query_tokens.len() as f64
}

/// `alpha * cos(Enc(q), Enc(x)) + (1 - alpha) * Lex(q, x)`.
pub fn hybrid_score(
    query_embedding: &[f32],
    query_tokens: &BTreeSet<String>,
    node_embedding: &[f32],
    node_text: &str,
    config: &HybridScoreConfig,
) -> f64 {
    let semantic = cosine(query_embedding, node_embedding);
    let lexical = lexical_overlap(query_tokens, node_text);
    config.alpha * semantic + (1.0 - config.alpha) * lexical
}

/// Scores every node against the query. An empty query (no tokens) scores
/// zero everywhere and is reported once.
pub fn score_query(
    query: &str,
    graph: &KnowledgeGraph,
    config: &HybridScoreConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<ScoreMap, RetrievalError> {
    let query_tokens = lex_tokens(query);
    let query_embedding = if query_tokens.is_empty() {
        log::warn!("query has no tokens after tokenization; all scores are 0");
        vec![0.0f32; embedder.dimension()]
    } else {
        embedder.embed_one(query)?
    };
    let mut scores = ScoreMap::new();
    for (id, entity) in &graph.entities {
        let text = format!("{} {}", entity.name, entity.description);
        scores.insert(
            id.clone(),
            hybrid_score(&query_embedding, &query_tokens, &entity.embedding, &text, config),
        );
    }
    for (id, module) in &graph.modules {
        scores.insert(
            id.clone(),
            hybrid_score(
                &query_embedding,
                &query_tokens,
                &module.summary_embedding,
                &module.summary,
                config,
            ),
        );
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPick {
    pub node: NodeId,
    pub score: f64,
    pub level: u32,
}

/// Per-level MMR selection: iteratively pick
/// `argmax λ·s(q,v) − (1−λ)·max_{u∈picked} cos(v,u)`.
/// Levels with budget zero are skipped; a level smaller than its budget is
/// taken whole with a diagnostic.
pub fn select_seeds(
    graph: &KnowledgeGraph,
    scores: &ScoreMap,
    config: &ExpansionConfig,
) -> (Vec<SeedPick>, Vec<String>) {
    let mut seeds = Vec::new();
    let mut diagnostics = Vec::new();
    for level in 0..=graph.level_count {
        let budget = config.seed_budget(level, graph.level_count);
        if budget == 0 {
            continue;
        }
        let mut candidates: Vec<NodeId> = graph.nodes_at_level(level);
        // Rank by score descending, id ascending for ties.
        candidates.sort_by(|a, b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(b))
        });
        if candidates.len() <= budget {
            if candidates.len() < budget {
                diagnostics.push(format!(
                    "level {level} has {} nodes, fewer than seed budget {budget}",
                    candidates.len()
                ));
            }
            seeds.extend(candidates.into_iter().map(|node| SeedPick {
                score: scores[&node],
                level,
                node,
            }));
            continue;
        }
        let mut picked: Vec<NodeId> = Vec::with_capacity(budget);
        while picked.len() < budget {
            let mut best: Option<(f64, &NodeId)> = None;
            for candidate in &candidates {
                if picked.contains(candidate) {
                    continue;
                }
                let redundancy = picked
                    .iter()
                    .map(|p| {
                        cosine(
                            graph.node_embedding(candidate).unwrap_or(&[]),
                            graph.node_embedding(p).unwrap_or(&[]),
                        )
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                let redundancy = if picked.is_empty() { 0.0 } else { redundancy };
                let objective =
                    config.mmr_lambda * scores[candidate] - (1.0 - config.mmr_lambda) * redundancy;
                // Strict comparison keeps the earlier (higher-score, lower-id)
                // candidate on exact ties.
                if best.map_or(true, |(b, _)| objective > b) {
                    best = Some((objective, candidate));
                }
            }
            match best {
                Some((_, node)) => picked.push(node.clone()),
                None => break,
            }
        }
        seeds.extend(picked.into_iter().map(|node| SeedPick {
            score: scores[&node],
            level,
            node,
        }));
    }
    (seeds, diagnostics)
}

/// One visited node: the best gain achieved, the hop/entry-kind of that best
/// entry, and a shortest-path predecessor (hop-minimal, so predecessor
/// chains always reach a seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub gain: f64,
    pub gain_hop: u32,
    pub entry_kind: Option<EdgeKind>,
    pub hop: u32,
    pub pred: Option<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpansionStats {
    pub frontier_pops: u64,
    pub expansions: u64,
    pub gate_crossings: u64,
    pub budget_used: usize,
    pub truncated_by_budget: bool,
}

/// The retrieved raw subgraph plus traversal bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub seeds: Vec<SeedPick>,
    pub visited: BTreeMap<NodeId, VisitRecord>,
    /// Indices into `graph.edges` of crossed edges with both endpoints
    /// visited, sorted.
    pub edges: Vec<usize>,
    /// Nodes in accumulation (first-pop) order.
    pub visit_order: Vec<NodeId>,
    pub stats: ExpansionStats,
}

/// Immutable path suffix shared between frontier entries.
struct PathStep {
    node: NodeId,
    parent: Option<std::rc::Rc<PathStep>>,
}

impl PathStep {
    fn contains(self_: &Option<std::rc::Rc<PathStep>>, node: &NodeId) -> bool {
        let mut cur = self_.as_ref();
        while let Some(step) = cur {
            if step.node == *node {
                return true;
            }
            cur = step.parent.as_ref();
        }
        false
    }
}

struct FrontierEntry {
    gain: f64,
    score: f64,
    node: NodeId,
    hop: u32,
    kind: Option<EdgeKind>,
    edge: Option<usize>,
    path: Option<std::rc::Rc<PathStep>>,
}

impl PartialEq for FrontierEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for FrontierEntry {}
impl PartialOrd for FrontierEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for FrontierEntry {
    /// Max-heap order: higher gain first, then higher score, then
    /// lexicographically smaller id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .partial_cmp(&other.gain)
            .unwrap_or(Ordering::Equal)
            .then(
                self.score
                    .partial_cmp(&other.score)
                    .unwrap_or(Ordering::Equal),
            )
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Gated best-first expansion from the seed set.
///
/// A frontier entry for node `v` reached from `u` at hop `t` has
/// `gain = s(q,v) · γ^t · w(kind(u,v))`. Entries carry their path, and an
/// entry never extends back onto its own path, so the per-node best gain is
/// exactly the maximum of the gain form over all simple paths from the seeds
/// of length ≤ h. Seeds enter at hop 0 with their own score and are exempt
/// from the gain floor. The first pop of each node accumulates its text
/// against the budget; expansion stops when the frontier empties or the
/// budget is exhausted.
pub fn gated_expand(
    graph: &KnowledgeGraph,
    seeds: &[SeedPick],
    scores: &ScoreMap,
    config: &ExpansionConfig,
    gates_enabled: bool,
) -> Result<RetrievalResult, RetrievalError> {
    if seeds.is_empty() {
        return Err(RetrievalError::NoSeeds);
    }
    let mut allowed: BTreeSet<EdgeKind> = [EdgeKind::Structural, EdgeKind::Hierarchical]
        .into_iter()
        .collect();
    if gates_enabled {
        allowed.insert(EdgeKind::CausalGate);
    }

    let mut heap: BinaryHeap<FrontierEntry> = BinaryHeap::new();
    // Best admitted gain and minimal admitted hop per node.
    let mut best_gain: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut min_hop: BTreeMap<NodeId, u32> = BTreeMap::new();
    // Predecessor of the hop-minimal entry; chains always reach a seed.
    let mut hop_pred: BTreeMap<NodeId, Option<NodeId>> = BTreeMap::new();

    for seed in seeds {
        if !graph.contains_node(&seed.node) {
            return Err(RetrievalError::UnknownSeed(seed.node.clone()));
        }
        if best_gain.contains_key(&seed.node) {
            continue;
        }
        let score = *scores.get(&seed.node).unwrap_or(&seed.score);
        best_gain.insert(seed.node.clone(), score);
        min_hop.insert(seed.node.clone(), 0);
        hop_pred.insert(seed.node.clone(), None);
        heap.push(FrontierEntry {
            gain: score,
            score,
            node: seed.node.clone(),
            hop: 0,
            kind: None,
            edge: None,
            path: Some(std::rc::Rc::new(PathStep {
                node: seed.node.clone(),
                parent: None,
            })),
        });
    }

    let mut visited: BTreeMap<NodeId, VisitRecord> = BTreeMap::new();
    let mut visit_order: Vec<NodeId> = Vec::new();
    let mut crossed: BTreeSet<usize> = BTreeSet::new();
    let mut stats = ExpansionStats::default();

    while let Some(entry) = heap.pop() {
        stats.frontier_pops += 1;
        let node = entry.node.clone();

        // First pop of a node accumulates it into the subgraph.
        if !visited.contains_key(&node) {
            let text_len = graph.node_text(&node).map_or(0, |t| t.chars().count());
            stats.budget_used += text_len;
            visited.insert(
                node.clone(),
                VisitRecord {
                    gain: entry.gain,
                    gain_hop: entry.hop,
                    entry_kind: entry.kind,
                    hop: *min_hop.get(&node).unwrap_or(&entry.hop),
                    pred: hop_pred.get(&node).cloned().unwrap_or(None),
                },
            );
            visit_order.push(node.clone());
            if let Some(edge) = entry.edge {
                crossed.insert(edge);
            }
            if config.budget_chars > 0 && stats.budget_used > config.budget_chars {
                stats.truncated_by_budget = true;
                break;
            }
        } else {
            let record = visited.get_mut(&node).expect("visited");
            if entry.gain > record.gain {
                record.gain = entry.gain;
                record.gain_hop = entry.hop;
                record.entry_kind = entry.kind;
            }
            record.hop = (*min_hop.get(&node).unwrap_or(&record.hop)).min(record.hop);
            record.pred = hop_pred.get(&node).cloned().unwrap_or(None);
            if let Some(edge) = entry.edge {
                crossed.insert(edge);
            }
        }

        if entry.hop >= config.hop_limit {
            continue;
        }
        stats.expansions += 1;

        let hop = entry.hop + 1;
        for (neighbor, edge_idx) in graph
            .neighbors(&node, &allowed)
            .expect("visited node exists")
        {
            if PathStep::contains(&entry.path, &neighbor) {
                continue; // stay on simple paths
            }
            let edge = &graph.edges[edge_idx];
            let score = *scores.get(&neighbor).unwrap_or(&0.0);
            let gain = score * config.gamma.powi(hop as i32) * config.weight(edge.kind);
            if gain < config.gain_floor {
                continue;
            }
            let improves_gain = best_gain.get(&neighbor).map_or(true, |&g| gain > g);
            let improves_hop = min_hop.get(&neighbor).map_or(true, |&t| hop < t);
            // A dead-end entry that improves neither the node's gain nor its
            // hop can never matter; anything extendable must stay.
            if hop == config.hop_limit && !improves_gain && !improves_hop {
                continue;
            }
            if improves_gain {
                best_gain.insert(neighbor.clone(), gain);
            }
            if improves_hop {
                min_hop.insert(neighbor.clone(), hop);
                hop_pred.insert(neighbor.clone(), Some(node.clone()));
            }
            heap.push(FrontierEntry {
                gain,
                score,
                node: neighbor.clone(),
                hop,
                kind: Some(edge.kind),
                edge: Some(edge_idx),
                path: Some(std::rc::Rc::new(PathStep {
                    node: neighbor,
                    parent: entry.path.clone(),
                })),
            });
        }
    }

    // Keep only crossed edges with both endpoints actually visited.
    let edges: Vec<usize> = crossed
        .into_iter()
        .filter(|&idx| {
            let e = &graph.edges[idx];
            visited.contains_key(&e.src) && visited.contains_key(&e.dst)
        })
        .collect();
    stats.gate_crossings = edges
        .iter()
        .filter(|&&idx| graph.edges[idx].kind == EdgeKind::CausalGate)
        .count() as u64;

    Ok(RetrievalResult {
        seeds: seeds.to_vec(),
        visited,
        edges,
        visit_order,
        stats,
    })
}

/// Convenience wrapper: score, seed, expand.
pub fn retrieve(
    query: &str,
    graph: &KnowledgeGraph,
    scoring: &HybridScoreConfig,
    expansion: &ExpansionConfig,
    embedder: &dyn EmbeddingProvider,
    gates_enabled: bool,
) -> Result<(RetrievalResult, ScoreMap), RetrievalError> {
    let scores = score_query(query, graph, scoring, embedder)?;
    let (seeds, _) = select_seeds(graph, &scores, expansion);
    let result = gated_expand(graph, &seeds, &scores, expansion, gates_enabled)?;
    Ok((result, scores))
}
