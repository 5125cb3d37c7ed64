//! Recursive module construction: partition the current level with Leiden,
//! summarize each module, aggregate inter-module edges, and repeat until the
//! level's summaries fit the context budget or one module remains.

pub mod leiden;

pub use leiden::{communities_connected, leiden_partition, modularity, Partition, WeightedGraph};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::HierarchyConfig;
use crate::graph::{EdgeKind, GraphError, KnowledgeGraph, ModuleNode, NodeId, RelationEdge};
use crate::prompts;
use crate::provider::{ChatProvider, ChatRequest, EmbeddingProvider, ProviderError};

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("cannot build a hierarchy over an empty graph")]
    EmptyGraph,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u32,
    /// Nodes partitioned at this step (the level below).
    pub nodes: usize,
    /// Edges among those nodes.
    pub edges: usize,
    /// Modules produced.
    pub modules: usize,
    pub modularity: f64,
    pub summary_chars: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HierarchyReport {
    pub levels: Vec<LevelStats>,
    pub level_count: u32,
    /// Modules whose summarizer call failed and got a concatenated fallback.
    pub fallback_modules: Vec<NodeId>,
}

/// Builds every module level in place. Level 0 edges are the structural
/// entity edges; aggregated inter-module weights count member edges.
pub fn build_hierarchy(
    graph: &mut KnowledgeGraph,
    chat: &dyn ChatProvider,
    embedder: &dyn EmbeddingProvider,
    config: &HierarchyConfig,
    max_in_flight: usize,
) -> Result<HierarchyReport, HierarchyError> {
    if graph.entities.is_empty() {
        return Err(HierarchyError::EmptyGraph);
    }
    let mut report = HierarchyReport::default();

    // Current level's nodes and weighted undirected edges between them.
    let mut node_ids: Vec<NodeId> = graph.entities.keys().cloned().collect();
    let mut edges: Vec<(usize, usize, f64)> = {
        let index: BTreeMap<&NodeId, usize> =
            node_ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
        graph
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Structural)
            .map(|e| {
                let w = if e.weight_hint > 0.0 { e.weight_hint } else { 1.0 };
                (index[&e.src], index[&e.dst], w)
            })
            .collect()
    };

    for level in 1..=config.max_levels {
        let below_count = node_ids.len();
        let view = WeightedGraph::new(below_count, &edges);
        let partition = leiden_partition(&view, config.resolution, config.seed ^ level as u64);
        let communities = partition.communities();

        // Materialize the modules.
        let mut module_ids = Vec::with_capacity(communities.len());
        let member_texts: Vec<String> = communities
            .iter()
            .map(|members| {
                members
                    .iter()
                    .map(|&i| graph.node_text(&node_ids[i]).unwrap_or_default())
                    .map(|t| format!("- {t}"))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
            .collect();

        let summaries = summarize_all(&member_texts, chat, config, max_in_flight);

        let mut summary_chars = 0usize;
        for (idx, members) in communities.iter().enumerate() {
            let id = NodeId::new(format!("m{level}:{idx:03}"));
            let (summary, fallback) = match &summaries[idx] {
                Ok(text) => (text.clone(), false),
                Err(_) => {
                    let concat: String = member_texts[idx].replace("- ", "");
                    (truncate_chars(&concat, config.summary_budget_chars), true)
                }
            };
            if fallback {
                report.fallback_modules.push(id.clone());
            }
            summary_chars += summary.chars().count();
            let summary_embedding = embedder.embed_one(&summary)?;
            let member_ids: std::collections::BTreeSet<NodeId> =
                members.iter().map(|&i| node_ids[i].clone()).collect();
            graph.add_module(ModuleNode {
                id: id.clone(),
                level,
                member_ids: member_ids.clone(),
                summary,
                summary_embedding,
                fallback_summary: fallback,
            })?;
            for member in &member_ids {
                graph.add_edge(RelationEdge {
                    src: id.clone(),
                    dst: member.clone(),
                    description: String::new(),
                    kind: EdgeKind::Hierarchical,
                    weight_hint: 1.0,
                })?;
            }
            module_ids.push(id);
        }

        report.levels.push(LevelStats {
            level,
            nodes: below_count,
            edges: edges.len(),
            modules: communities.len(),
            modularity: partition.modularity,
            summary_chars,
        });
        report.level_count = level;

        // Aggregate inter-module edges: weight = count of member edges.
        let mut aggregated: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(u, v, _) in &edges {
            let (a, b) = (partition.assignment[u], partition.assignment[v]);
            if a != b {
                let key = (a.min(b), a.max(b));
                *aggregated.entry(key).or_insert(0.0) += 1.0;
            }
        }

        let stop = communities.len() == 1
            || summary_chars <= config.context_budget_chars
            || communities.len() == below_count;
        if stop {
            break;
        }

        node_ids = module_ids;
        edges = aggregated
            .into_iter()
            .map(|((a, b), w)| (a, b, w))
            .collect();
    }

    Ok(report)
}

/// Summarizes one module's member texts, truncating to the configured budget.
pub fn summarize_module(
    member_texts: &str,
    chat: &dyn ChatProvider,
    config: &HierarchyConfig,
) -> Result<String, ProviderError> {
    let (system, user) = prompts::summary_prompt(member_texts, config.summary_budget_chars);
    let response = chat.chat(&ChatRequest::new(system, user))?;
    let trimmed = response.text.trim();
    if trimmed.is_empty() {
        return Err(ProviderError::MalformedResponse("empty summary".into()));
    }
    Ok(truncate_chars(trimmed, config.summary_budget_chars))
}

fn summarize_all(
    member_texts: &[String],
    chat: &dyn ChatProvider,
    config: &HierarchyConfig,
    max_in_flight: usize,
) -> Vec<Result<String, ProviderError>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        member_texts
            .par_iter()
            .map(|texts| summarize_module(texts, chat, config))
            .collect()
    })
}

fn truncate_chars(text: &str, budget: usize) -> String {
    if text.chars().count() <= budget {
        text.to_string()
    } else {
        text.chars().take(budget).collect()
    }
}
