//! Causal evidence selection and grounded generation: the retrieved subgraph
//! is linearized into a short-id table, an LLM selects the causally valid
//! subset (optionally tagging spurious items), and the answer is generated
//! from the selected texts only.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SelectionMode;
use crate::graph::{KnowledgeGraph, NodeId};
use crate::prompts;
use crate::provider::{ChatProvider, ChatRequest, ProviderError};
use crate::retrieval::RetrievalResult;

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("nothing retrieved: cannot linearize an empty subgraph")]
    EmptySubgraph,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Node,
    Edge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub id: String,
    pub kind: RowKind,
    pub text: String,
}

/// Token-efficient table form of the retrieved subgraph. Node rows come
/// first, ordered by descending gain then id; edge rows reference node rows
/// by short id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LinearizedGraph {
    pub rows: Vec<LinearRow>,
    pub node_of: BTreeMap<String, NodeId>,
    pub short_of: BTreeMap<NodeId, String>,
    /// Short edge id -> index into `graph.edges`.
    pub edge_of: BTreeMap<String, usize>,
}

impl LinearizedGraph {
    /// The prompt table: one `id: text` line per row.
    pub fn table(&self) -> String {
        self.rows
            .iter()
            .map(|r| format!("{}: {}", r.id, r.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.node_of.contains_key(id) || self.edge_of.contains_key(id)
    }
}

/// Linearizes the retrieval result: `N1..Nn` node rows by descending gain
/// (ties by node id), then `R1..Rm` edge rows ordered by their endpoint rows.
pub fn linearize(graph: &KnowledgeGraph, result: &RetrievalResult) -> Result<LinearizedGraph, ReasoningError> {
    if result.visited.is_empty() {
        return Err(ReasoningError::EmptySubgraph);
    }
    let mut nodes: Vec<(&NodeId, f64)> = result
        .visited
        .iter()
        .map(|(id, rec)| (id, rec.gain))
        .collect();
    nodes.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(b.0))
    });

    let mut out = LinearizedGraph::default();
    let mut rank: BTreeMap<NodeId, usize> = BTreeMap::new();
    for (i, (id, _)) in nodes.iter().enumerate() {
        let short = format!("N{}", i + 1);
        out.node_of.insert(short.clone(), (*id).clone());
        out.short_of.insert((*id).clone(), short.clone());
        rank.insert((*id).clone(), i);
        let text = graph.node_text(id).unwrap_or_default();
        out.rows.push(LinearRow {
            id: short,
            kind: RowKind::Node,
            text,
        });
    }

    let mut edge_rows: Vec<(usize, usize, usize)> = result
        .edges
        .iter()
        .map(|&idx| {
            let e = &graph.edges[idx];
            (rank[&e.src], rank[&e.dst], idx)
        })
        .collect();
    edge_rows.sort();
    for (i, (src_rank, dst_rank, idx)) in edge_rows.iter().enumerate() {
        let short = format!("R{}", i + 1);
        let edge = &graph.edges[*idx];
        let label = if edge.description.is_empty() {
            edge.kind.to_string()
        } else {
            edge.description.clone()
        };
        out.edge_of.insert(short.clone(), *idx);
        out.rows.push(LinearRow {
            id: short,
            kind: RowKind::Edge,
            text: format!("N{} -({label})-> N{}", src_rank + 1, dst_rank + 1),
        });
    }
    Ok(out)
}

/// The causally selected subset of the linearized subgraph.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CausalSelection {
    pub mode: Option<SelectionMode>,
    /// Selected short ids (causal supports), including auto-included
    /// endpoints of selected edges.
    pub precise: Vec<String>,
    /// Short ids tagged spurious (spurious-aware mode only).
    pub ct_precise: Vec<String>,
    /// Ids the model emitted that are not in the table.
    pub dropped: Vec<String>,
    /// Endpoints pulled in because a selected edge required them.
    pub auto_included: Vec<String>,
    /// Selection fell back to the whole subgraph after parse failures.
    pub fallback: bool,
    pub transcript_ref: String,
}

impl CausalSelection {
    /// Node ids of the selection, resolved through the linearization.
    pub fn node_ids(&self, lin: &LinearizedGraph) -> BTreeSet<NodeId> {
        self.precise
            .iter()
            .filter_map(|s| lin.node_of.get(s).cloned())
            .collect()
    }

    /// Edge indices of the selection.
    pub fn edge_indices(&self, lin: &LinearizedGraph) -> BTreeSet<usize> {
        self.precise
            .iter()
            .filter_map(|s| lin.edge_of.get(s).copied())
            .collect()
    }
}

/// Runs the selection prompt for the chosen mode and parses the id lists.
/// Invalid ids are dropped with diagnostics; selecting an edge auto-includes
/// its endpoints. After one retry, a still-unparseable response falls back
/// to selecting everything, flagged as degraded.
pub fn select_causal(
    lin: &LinearizedGraph,
    query: &str,
    provider: &dyn ChatProvider,
    mode: SelectionMode,
) -> CausalSelection {
    let table = lin.table();
    let (system, user) = match mode {
        SelectionMode::SpuriousAware => prompts::spurious_aware_selection_prompt(query, &table),
        SelectionMode::Standard => prompts::standard_selection_prompt(query, &table),
    };
    let request = ChatRequest::new(system, user);
    let transcript_ref = request.canonical_hash();

    let mut parsed: Option<(Vec<String>, Vec<String>)> = None;
    for attempt in 0..2 {
        match provider.chat(&request) {
            Ok(response) => {
                if let Some(lists) = parse_selection(&response.text, mode) {
                    parsed = Some(lists);
                    break;
                }
                log::warn!("selection response unparseable (attempt {})", attempt + 1);
            }
            Err(e) => log::warn!("selection call failed (attempt {}): {e}", attempt + 1),
        }
    }

    let Some((raw_precise, raw_ct)) = parsed else {
        // Fallback: keep the whole retrieved subgraph, flagged.
        return CausalSelection {
            mode: Some(mode),
            precise: lin.rows.iter().map(|r| r.id.clone()).collect(),
            ct_precise: Vec::new(),
            dropped: Vec::new(),
            auto_included: Vec::new(),
            fallback: true,
            transcript_ref,
        };
    };

    let mut selection = CausalSelection {
        mode: Some(mode),
        fallback: false,
        transcript_ref,
        ..CausalSelection::default()
    };
    let mut precise_set: BTreeSet<String> = BTreeSet::new();
    for id in raw_precise {
        if lin.contains_id(&id) {
            precise_set.insert(id);
        } else {
            selection.dropped.push(id);
        }
    }
    for id in raw_ct {
        if precise_set.contains(&id) {
            // precise wins on overlap; keep the sets disjoint
            selection.dropped.push(id);
        } else if lin.contains_id(&id) {
            selection.ct_precise.push(id);
        } else {
            selection.dropped.push(id);
        }
    }
    selection.precise = precise_set.into_iter().collect();
    selection
}

/// Reconstructed pruned subgraph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub nodes: BTreeSet<NodeId>,
    pub edges: BTreeSet<usize>,
}

/// Resolves a selection into concrete graph elements, auto-including the
/// endpoints of selected edges.
pub fn reconstruct(
    graph: &KnowledgeGraph,
    lin: &LinearizedGraph,
    selection: &mut CausalSelection,
) -> Subgraph {
    let mut nodes = selection.node_ids(lin);
    let edges = selection.edge_indices(lin);
    for &idx in &edges {
        let edge = &graph.edges[idx];
        for endpoint in [&edge.src, &edge.dst] {
            if nodes.insert(endpoint.clone()) {
                if let Some(short) = lin.short_of.get(endpoint) {
                    if !selection.precise.contains(short) {
                        selection.auto_included.push(short.clone());
                        selection.precise.push(short.clone());
                    }
                }
            }
        }
    }
    selection.precise.sort();
    selection.precise.dedup();
    Subgraph { nodes, edges }
}

fn parse_selection(raw: &str, mode: SelectionMode) -> Option<(Vec<String>, Vec<String>)> {
    let value = extract_json(raw)?;
    match mode {
        SelectionMode::SpuriousAware => {
            let obj = value.as_object()?;
            let precise = string_list(obj.get("precise")?)?;
            let ct = obj
                .get("ct_precise")
                .and_then(string_list)
                .unwrap_or_default();
            Some((precise, ct))
        }
        SelectionMode::Standard => {
            let list = string_list(&value)?;
            Some((list, Vec::new()))
        }
    }
}

fn string_list(value: &serde_json::Value) -> Option<Vec<String>> {
    value
        .as_array()?
        .iter()
        .map(|v| v.as_str().map(str::to_string))
        .collect()
}

/// Pulls the first balanced JSON object or array out of a response that may
/// carry prose around it.
fn extract_json(raw: &str) -> Option<serde_json::Value> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    for (open, close) in [('{', '}'), ('[', ']')] {
        if let Some(start) = trimmed.find(open) {
            let mut depth = 0i32;
            for (i, c) in trimmed[start..].char_indices() {
                if c == open {
                    depth += 1;
                } else if c == close {
                    depth -= 1;
                    if depth == 0 {
                        let candidate = &trimmed[start..start + i + 1];
                        if let Ok(v) = serde_json::from_str(candidate) {
                            return Some(v);
                        }
                        break;
                    }
                }
            }
        }
    }
    None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    pub answer: String,
    /// Short ids of the evidence actually shown to the generator.
    pub evidence_ids: Vec<String>,
    /// No verified evidence survived selection; the prompt said so.
    pub abstained: bool,
}

/// Generates the final answer strictly from the selected evidence rows.
pub fn generate_answer(
    query: &str,
    lin: &LinearizedGraph,
    selection: &CausalSelection,
    provider: &dyn ChatProvider,
) -> Result<GeneratedAnswer, ReasoningError> {
    let selected: BTreeSet<&String> = selection.precise.iter().collect();
    let mut evidence_lines = Vec::new();
    let mut evidence_ids = Vec::new();
    for row in &lin.rows {
        if selected.contains(&row.id) {
            evidence_lines.push(format!("{}: {}", row.id, row.text));
            evidence_ids.push(row.id.clone());
        }
    }
    let evidence = evidence_lines.join("\n");
    let abstained = evidence.is_empty();
    let (system, user) = prompts::generation_prompt(query, &evidence);
    let response = provider.chat(&ChatRequest::new(system, user))?;
    Ok(GeneratedAnswer {
        answer: response.text,
        evidence_ids,
        abstained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExpansionConfig;
    use crate::graph::{EdgeKind, EntityNode, RelationEdge};
    use crate::provider::{MockChat, MockRule};
    use crate::retrieval::{gated_expand, ScoreMap, SeedPick};

    fn fixture() -> (KnowledgeGraph, RetrievalResult) {
        let mut graph = KnowledgeGraph::new(4);
        for (i, (id, desc)) in [
            ("alpha", "the first entity"),
            ("beta", "the second entity"),
            ("hub", "a noisy hub entity"),
        ]
        .iter()
        .enumerate()
        {
            let mut emb = vec![0.0f32; 4];
            emb[i] = 1.0;
            graph
                .add_entity(EntityNode {
                    id: NodeId::new(*id),
                    name: id.to_string(),
                    description: desc.to_string(),
                    aliases: Default::default(),
                    source_chunks: ["c".to_string()].into_iter().collect(),
                    embedding: emb,
                })
                .unwrap();
        }
        graph
            .add_edge(RelationEdge {
                src: NodeId::new("alpha"),
                dst: NodeId::new("beta"),
                description: "alpha drives beta".into(),
                kind: EdgeKind::Structural,
                weight_hint: 1.0,
            })
            .unwrap();
        graph
            .add_edge(RelationEdge {
                src: NodeId::new("beta"),
                dst: NodeId::new("hub"),
                description: "beta mentions hub".into(),
                kind: EdgeKind::Structural,
                weight_hint: 1.0,
            })
            .unwrap();
        let mut scores = ScoreMap::new();
        scores.insert(NodeId::new("alpha"), 0.9);
        scores.insert(NodeId::new("beta"), 0.8);
        scores.insert(NodeId::new("hub"), 0.7);
        let config = ExpansionConfig {
            gain_floor: 0.0,
            budget_chars: 0,
            ..ExpansionConfig::default()
        };
        let result = gated_expand(
            &graph,
            &[SeedPick {
                node: NodeId::new("alpha"),
                score: 0.9,
                level: 0,
            }],
            &scores,
            &config,
            true,
        )
        .unwrap();
        (graph, result)
    }

    #[test]
    fn linearize_emits_node_then_edge_rows() {
        let (graph, result) = fixture();
        let lin = linearize(&graph, &result).unwrap();
        assert_eq!(lin.rows.len(), 5); // 3 nodes + 2 edges
        assert_eq!(lin.rows[0].id, "N1");
        assert!(lin.rows.iter().any(|r| r.id == "R1"));
        // Highest gain first: the seed.
        assert_eq!(lin.node_of["N1"], NodeId::new("alpha"));
        // Edge rows reference existing node rows.
        for row in lin.rows.iter().filter(|r| r.kind == RowKind::Edge) {
            assert!(row.text.contains("N"));
        }
    }

    #[test]
    fn linearize_row_count_and_id_uniqueness() {
        let (graph, result) = fixture();
        let lin = linearize(&graph, &result).unwrap();
        assert_eq!(lin.rows.len(), result.visited.len() + result.edges.len());
        let mut ids: Vec<&String> = lin.rows.iter().map(|r| &r.id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), lin.rows.len());
    }

    #[test]
    fn select_all_round_trips_to_s_raw() {
        let (graph, result) = fixture();
        let lin = linearize(&graph, &result).unwrap();
        let all: Vec<String> = lin.rows.iter().map(|r| r.id.clone()).collect();
        let mut selection = CausalSelection {
            precise: all,
            ..CausalSelection::default()
        };
        let subgraph = reconstruct(&graph, &lin, &mut selection);
        let raw_nodes: BTreeSet<NodeId> = result.visited.keys().cloned().collect();
        let raw_edges: BTreeSet<usize> = result.edges.iter().copied().collect();
        assert_eq!(subgraph.nodes, raw_nodes);
        assert_eq!(subgraph.edges, raw_edges);
    }

    #[test]
    fn scripted_selection_parses_and_reconstructs() {
        let (graph, result) = fixture();
        let lin = linearize(&graph, &result).unwrap();
        let mock = MockChat::new(vec![MockRule::new(
            &["Evidence table"],
            r#"{"precise": ["N1", "R1", "N2"], "ct_precise": []}"#,
        )]);
        let mut selection = select_causal(&lin, "why?", &mock, SelectionMode::SpuriousAware);
        assert!(!selection.fallback);
        let subgraph = reconstruct(&graph, &lin, &mut selection);
        assert_eq!(subgraph.nodes.len(), 2);
        assert_eq!(subgraph.edges.len(), 1);
    }

    #[test]
    fn unknown_ids_are_dropped_with_diagnostics() {
        let (graph, result) = fixture();
        let lin = linearize(&graph, &result).unwrap();
        let mock = MockChat::new(vec![MockRule::new(
            &["Evidence table"],
            r#"{"precise": ["N1", "N99"], "ct_precise": ["R77"]}"#,
        )]);
        let mut selection = select_causal(&lin, "why?", &mock, SelectionMode::SpuriousAware);
        reconstruct(&graph, &lin, &mut selection);
        assert_eq!(selection.dropped, vec!["N99".to_string(), "R77".to_string()]);
        assert_eq!(selection.precise, vec!["N1".to_string()]);
    }

    #[test]
    fn spurious_tagged_nodes_stay_out_of_the_selection() {
        let (graph, result) = fixture();
        let lin = linearize(&graph, &result).unwrap();
        // Tag the hub node as spurious; select the causal chain only.
        let hub_short = lin.short_of[&NodeId::new("hub")].clone();
        let response = format!(
            r#"{{"precise": ["N1", "N2", "R1"], "ct_precise": ["{hub_short}"]}}"#
        );
        let mock = MockChat::new(vec![MockRule::new(&["Evidence table"], &response)]);
        let mut selection = select_causal(&lin, "why?", &mock, SelectionMode::SpuriousAware);
        let subgraph = reconstruct(&graph, &lin, &mut selection);
        assert!(!subgraph.nodes.contains(&NodeId::new("hub")));
        assert!(selection.ct_precise.contains(&hub_short));
        // precise and ct_precise stay disjoint
        for id in &selection.ct_precise {
            assert!(!selection.precise.contains(id));
        }
    }

    #[test]
    fn standard_mode_parses_a_bare_array() {
        let (graph, result) = fixture();
        let lin = linearize(&graph, &result).unwrap();
        let mock = MockChat::new(vec![MockRule::new(&["single JSON array"], r#"["N1","N2"]"#)]);
        let mut selection = select_causal(&lin, "why?", &mock, SelectionMode::Standard);
        let subgraph = reconstruct(&graph, &lin, &mut selection);
        assert_eq!(subgraph.nodes.len(), 2);
        assert!(selection.ct_precise.is_empty());
    }

    #[test]
    fn unparseable_selection_falls_back_to_everything() {
        let (graph, result) = fixture();
        let lin = linearize(&graph, &result).unwrap();
        let mock = MockChat::new(vec![MockRule::new(&[], "I refuse to answer in JSON")]);
        let mut selection = select_causal(&lin, "why?", &mock, SelectionMode::SpuriousAware);
        assert!(selection.fallback);
        let subgraph = reconstruct(&graph, &lin, &mut selection);
        assert_eq!(subgraph.nodes.len(), result.visited.len());
        assert_eq!(mock.call_count(), 2); // one retry before falling back
    }

    #[test]
    fn generation_sees_only_selected_texts() {
        let (graph, result) = fixture();
        let lin = linearize(&graph, &result).unwrap();
        let mock_select = MockChat::new(vec![MockRule::new(
            &["Evidence table"],
            r#"{"precise": ["N1"], "ct_precise": []}"#,
        )]);
        let mut selection =
            select_causal(&lin, "why?", &mock_select, SelectionMode::SpuriousAware);
        reconstruct(&graph, &lin, &mut selection);

        // The generator mock echoes its own prompt so we can scan it.
        struct Echo;
        impl ChatProvider for Echo {
            fn chat(&self, request: &ChatRequest) -> Result<crate::provider::ChatResponse, ProviderError> {
                Ok(crate::provider::ChatResponse::text(request.user.clone()))
            }
        }
        let answer = generate_answer("why?", &lin, &selection, &Echo).unwrap();
        // Rejected texts must not leak into the prompt.
        assert!(!answer.answer.contains("the second entity"));
        assert!(!answer.answer.contains("a noisy hub entity"));
        assert!(answer.answer.contains("the first entity"));
        assert_eq!(answer.evidence_ids, vec!["N1".to_string()]);
        assert!(!answer.abstained);
    }

    #[test]
    fn empty_selection_reports_abstention() {
        let (graph, result) = fixture();
        let lin = linearize(&graph, &result).unwrap();
        let mock_select = MockChat::new(vec![MockRule::new(
            &["Evidence table"],
            r#"{"precise": [], "ct_precise": ["N1","N2","N3"]}"#,
        )]);
        let mut selection =
            select_causal(&lin, "why?", &mock_select, SelectionMode::SpuriousAware);
        reconstruct(&graph, &lin, &mut selection);
        let generator = MockChat::new(vec![MockRule::new(
            &["no verified evidence"],
            "The corpus does not answer this.",
        )]);
        let answer = generate_answer("why?", &lin, &selection, &generator).unwrap();
        assert!(answer.abstained);
        assert!(answer.evidence_ids.is_empty());
    }
}
