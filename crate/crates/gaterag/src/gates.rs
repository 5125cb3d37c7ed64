//! Causal gate construction: LLM verification of module pairs with top-down
//! hierarchical pruning. Layers are processed from the top down; within a
//! layer every unordered pair is verified once with a direction-eliciting
//! prompt, and candidates one level down are pruned when a parent-level gate
//! already covers them.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EdgeKind, GateProvenance, GraphError, KnowledgeGraph, NodeId, RelationEdge};
use crate::prompts;
use crate::provider::{ChatProvider, ChatRequest, ProviderError};

#[derive(Debug, Error)]
pub enum GateError {
    #[error("graph has no module hierarchy; build it first")]
    MissingHierarchy,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipReason {
    OwnChild,
    CoveredByParentGate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDirection {
    Forward,
    Backward,
    Both,
    None,
}

/// Outcome of one verification call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateVerification {
    pub direction: GateDirection,
    pub score: f64,
    pub accepted: bool,
    pub transcript_ref: String,
    /// Verdict could not be parsed; treated as negative.
    pub degraded: bool,
    /// The provider call itself failed; also negative.
    pub provider_failed: bool,
}

/// One module pair considered by the builder. Skipped candidates carry no
/// verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateCandidate {
    pub src_module: NodeId,
    pub dst_module: NodeId,
    pub reason_skipped: Option<SkipReason>,
    pub verification: Option<GateVerification>,
}

/// Candidates for one layer pass: intra-layer unordered pairs, then
/// inter-layer pairs against the next lower layer with skip tagging.
#[derive(Debug, Clone, Default)]
pub struct LevelCandidates {
    pub intra: Vec<GateCandidate>,
    pub inter: Vec<GateCandidate>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GateReport {
    pub gates: Vec<GateProvenance>,
    /// Every candidate considered, including skipped ones, in build order.
    pub candidates: Vec<GateCandidate>,
    /// LLM verification calls issued (one per examined pair).
    pub call_count: usize,
    /// Unordered module pairs an exhaustive build would verify.
    pub exhaustive_pair_count: usize,
    pub unparseable_verdicts: usize,
    pub provider_failures: usize,
}

/// Enumerates the candidate pairs for layer `level`, given the causal peers
/// discovered by that layer's intra pass. Unordered intra pairs come first
/// (src < dst); inter candidates pair each module with the layer below,
/// tagging own children and children of connected peers as skipped.
pub fn enumerate_candidates(
    graph: &KnowledgeGraph,
    level: u32,
    connected_peers: &BTreeMap<NodeId, BTreeSet<NodeId>>,
) -> LevelCandidates {
    let modules = graph.nodes_at_level(level);
    let mut out = LevelCandidates::default();
    for (i, a) in modules.iter().enumerate() {
        for b in modules.iter().skip(i + 1) {
            out.intra.push(GateCandidate {
                src_module: a.clone(),
                dst_module: b.clone(),
                reason_skipped: None,
                verification: None,
            });
        }
    }
    if level > 1 {
        let below = graph.nodes_at_level(level - 1);
        for module in &modules {
            let children: &BTreeSet<NodeId> = &graph.modules[module].member_ids;
            let covered: BTreeSet<&NodeId> = connected_peers
                .get(module)
                .map(|peers| {
                    peers
                        .iter()
                        .flat_map(|p| graph.modules[p].member_ids.iter())
                        .collect()
                })
                .unwrap_or_default();
            for candidate in &below {
                let reason = if children.contains(candidate) {
                    Some(SkipReason::OwnChild)
                } else if covered.contains(candidate) {
                    Some(SkipReason::CoveredByParentGate)
                } else {
                    None
                };
                out.inter.push(GateCandidate {
                    src_module: module.clone(),
                    dst_module: candidate.clone(),
                    reason_skipped: reason,
                    verification: None,
                });
            }
        }
    }
    out
}

/// Verifies one pair with the direction-eliciting prompt. Unparseable
/// verdicts and provider failures are conservatively negative.
pub fn verify_gate(
    summary_a: &str,
    summary_b: &str,
    provider: &dyn ChatProvider,
    tau: f64,
) -> GateVerification {
    let (system, user) = prompts::gate_verification_prompt(summary_a, summary_b);
    let request = ChatRequest::new(system, user);
    let transcript_ref = request.canonical_hash();
    match provider.chat(&request) {
        Ok(response) => {
            let (direction, score, degraded) = parse_verdict(&response.text);
            let accepted = direction != GateDirection::None && score >= tau;
            GateVerification {
                direction: if accepted { direction } else { GateDirection::None },
                score,
                accepted,
                transcript_ref,
                degraded,
                provider_failed: false,
            }
        }
        Err(e) => {
            log::warn!("gate verification call failed: {e}");
            GateVerification {
                direction: GateDirection::None,
                score: 0.0,
                accepted: false,
                transcript_ref,
                degraded: false,
                provider_failed: true,
            }
        }
    }
}

fn parse_verdict(raw: &str) -> (GateDirection, f64, bool) {
    let first = raw
        .trim()
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric() && c != '.')
        .to_lowercase();
    match first.as_str() {
        "forward" | "yes" => (GateDirection::Forward, 1.0, false),
        "backward" => (GateDirection::Backward, 1.0, false),
        "both" => (GateDirection::Both, 1.0, false),
        "none" | "no" => (GateDirection::None, 0.0, false),
        other => match other.parse::<f64>() {
            Ok(score) if (0.0..=1.0).contains(&score) => (GateDirection::Forward, score, false),
            _ => (GateDirection::None, 0.0, true),
        },
    }
}

/// Runs the full top-down build: for each layer from the top, verify intra
/// pairs, collect connected peers, then verify the unpruned inter candidates.
/// Accepted gates are installed as causal-gate edges with provenance; a
/// re-run replaces any existing gate set.
pub fn build_gates(
    graph: &mut KnowledgeGraph,
    provider: &dyn ChatProvider,
    tau: f64,
    max_in_flight: usize,
) -> Result<GateReport, GateError> {
    if graph.level_count == 0 {
        return Err(GateError::MissingHierarchy);
    }
    graph.clear_gates();

    let mut report = GateReport::default();
    let total_modules = graph.modules.len();
    report.exhaustive_pair_count = total_modules * total_modules.saturating_sub(1) / 2;

    for level in (1..=graph.level_count).rev() {
        // Intra-layer pass.
        let mut candidates = enumerate_candidates(graph, level, &BTreeMap::new());
        verify_batch(graph, provider, tau, max_in_flight, &mut candidates.intra);
        let mut peers: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        for candidate in &candidates.intra {
            report.call_count += 1;
            if let Some(v) = &candidate.verification {
                if v.accepted {
                    peers
                        .entry(candidate.src_module.clone())
                        .or_default()
                        .insert(candidate.dst_module.clone());
                    peers
                        .entry(candidate.dst_module.clone())
                        .or_default()
                        .insert(candidate.src_module.clone());
                }
            }
        }
        install_accepted(graph, &candidates.intra, &mut report)?;
        report.candidates.extend(candidates.intra);

        // Inter-layer pass with look-ahead pruning from this layer's peers.
        if level > 1 {
            let enumerated = enumerate_candidates(graph, level, &peers);
            let (mut to_verify, skipped): (Vec<_>, Vec<_>) = enumerated
                .inter
                .into_iter()
                .partition(|c| c.reason_skipped.is_none());
            verify_batch(graph, provider, tau, max_in_flight, &mut to_verify);
            report.call_count += to_verify.len();
            install_accepted(graph, &to_verify, &mut report)?;
            report.candidates.extend(to_verify);
            report.candidates.extend(skipped);
        }
    }

    report.gates = graph.gates.clone();
    Ok(report)
}

fn verify_batch(
    graph: &KnowledgeGraph,
    provider: &dyn ChatProvider,
    tau: f64,
    max_in_flight: usize,
    candidates: &mut [GateCandidate],
) {
    let summaries: Vec<(String, String)> = candidates
        .iter()
        .map(|c| {
            (
                graph.modules[&c.src_module].summary.clone(),
                graph.modules[&c.dst_module].summary.clone(),
            )
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .expect("thread pool");
    let verdicts: Vec<GateVerification> = pool.install(|| {
        summaries
            .par_iter()
            .map(|(a, b)| verify_gate(a, b, provider, tau))
            .collect()
    });
    for (candidate, verdict) in candidates.iter_mut().zip(verdicts) {
        candidate.verification = Some(verdict);
    }
}

fn install_accepted(
    graph: &mut KnowledgeGraph,
    candidates: &[GateCandidate],
    report: &mut GateReport,
) -> Result<(), GateError> {
    for candidate in candidates {
        let Some(v) = &candidate.verification else {
            continue;
        };
        if v.degraded {
            report.unparseable_verdicts += 1;
        }
        if v.provider_failed {
            report.provider_failures += 1;
        }
        if !v.accepted {
            continue;
        }
        let mut directed: Vec<(NodeId, NodeId)> = Vec::new();
        match v.direction {
            GateDirection::Forward => {
                directed.push((candidate.src_module.clone(), candidate.dst_module.clone()))
            }
            GateDirection::Backward => {
                directed.push((candidate.dst_module.clone(), candidate.src_module.clone()))
            }
            GateDirection::Both => {
                directed.push((candidate.src_module.clone(), candidate.dst_module.clone()));
                directed.push((candidate.dst_module.clone(), candidate.src_module.clone()));
            }
            GateDirection::None => {}
        }
        for (src, dst) in directed {
            if graph.gates.iter().any(|g| g.src == src && g.dst == dst) {
                continue;
            }
            graph.add_edge(RelationEdge {
                src: src.clone(),
                dst: dst.clone(),
                description: "verified causal dependency".into(),
                kind: EdgeKind::CausalGate,
                weight_hint: v.score,
            })?;
            graph.gates.push(GateProvenance {
                src,
                dst,
                score: v.score,
                direction: format!("{:?}", v.direction).to_lowercase(),
                transcript_ref: v.transcript_ref.clone(),
            });
        }
    }
    Ok(())
}

/// Coverage predicate: a pair is covered when a gate (either direction)
/// links an ancestor-or-self of one side to an ancestor-or-self of the
/// other, or when one side contains the other hierarchically.
pub fn pair_covered(graph: &KnowledgeGraph, a: &NodeId, b: &NodeId) -> bool {
    let mut lineage_a: Vec<NodeId> = vec![a.clone()];
    lineage_a.extend(graph.ancestors(a));
    let mut lineage_b: Vec<NodeId> = vec![b.clone()];
    lineage_b.extend(graph.ancestors(b));
    if lineage_a.contains(b) || lineage_b.contains(a) {
        return true; // hierarchical inclusion
    }
    for x in &lineage_a {
        for y in &lineage_b {
            if graph
                .gates
                .iter()
                .any(|g| (g.src == *x && g.dst == *y) || (g.src == *y && g.dst == *x))
            {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EntityNode, ModuleNode};
    use crate::provider::{MockChat, MockRule};
    use std::collections::BTreeSet;

    /// Builds a two-level hierarchy: `tops` top modules, each with `branch`
    /// children, each child holding one entity. Summaries carry unique
    /// markers (`MOD <id>`) so mock rules can target pairs.
    fn fixture(tops: usize, branch: usize) -> KnowledgeGraph {
        let mut graph = KnowledgeGraph::new(4);
        let unit = vec![1.0f32, 0.0, 0.0, 0.0];
        let mut child_idx = 0usize;
        for t in 0..tops {
            let mut top_members = BTreeSet::new();
            for _ in 0..branch {
                let child_id = NodeId::new(format!("m1:{child_idx:03}"));
                let entity_id = NodeId::new(format!("e:{child_idx:03}"));
                graph
                    .add_entity(EntityNode {
                        id: entity_id.clone(),
                        name: format!("entity {child_idx}"),
                        description: "leaf".into(),
                        aliases: BTreeSet::new(),
                        source_chunks: ["c".to_string()].into_iter().collect(),
                        embedding: unit.clone(),
                    })
                    .unwrap();
                graph
                    .add_module(ModuleNode {
                        id: child_id.clone(),
                        level: 1,
                        member_ids: [entity_id].into_iter().collect(),
                        summary: format!("MOD m1:{child_idx:03} child of top {t}"),
                        summary_embedding: unit.clone(),
                        fallback_summary: false,
                    })
                    .unwrap();
                top_members.insert(child_id);
                child_idx += 1;
            }
            let top_id = NodeId::new(format!("m2:{t:03}"));
            graph
                .add_module(ModuleNode {
                    id: top_id.clone(),
                    level: 2,
                    member_ids: top_members.clone(),
                    summary: format!("MOD m2:{t:03} top module {t}"),
                    summary_embedding: unit.clone(),
                    fallback_summary: false,
                })
                .unwrap();
            for m in &top_members {
                graph
                    .add_edge(RelationEdge {
                        src: top_id.clone(),
                        dst: m.clone(),
                        description: String::new(),
                        kind: EdgeKind::Hierarchical,
                        weight_hint: 1.0,
                    })
                    .unwrap();
            }
        }
        graph
    }

    fn flat_fixture(modules: usize) -> KnowledgeGraph {
        let mut graph = KnowledgeGraph::new(4);
        let unit = vec![0.0f32, 1.0, 0.0, 0.0];
        for i in 0..modules {
            let entity_id = NodeId::new(format!("e:{i:03}"));
            graph
                .add_entity(EntityNode {
                    id: entity_id.clone(),
                    name: format!("entity {i}"),
                    description: "leaf".into(),
                    aliases: BTreeSet::new(),
                    source_chunks: ["c".to_string()].into_iter().collect(),
                    embedding: unit.clone(),
                })
                .unwrap();
            let id = NodeId::new(format!("m1:{i:03}"));
            graph
                .add_module(ModuleNode {
                    id: id.clone(),
                    level: 1,
                    member_ids: [entity_id].into_iter().collect(),
                    summary: format!("MOD m1:{i:03}"),
                    summary_embedding: unit.clone(),
                    fallback_summary: false,
                })
                .unwrap();
        }
        graph
    }

    #[test]
    fn scripted_yes_and_no_verdicts() {
        let yes = MockChat::new(vec![MockRule::new(&[], "yes")]);
        let v = verify_gate("a", "b", &yes, 0.5);
        assert!(v.accepted);
        assert_eq!(v.score, 1.0);
        assert_eq!(v.direction, GateDirection::Forward);

        let no = MockChat::new(vec![MockRule::new(&[], "no")]);
        let v = verify_gate("a", "b", &no, 0.5);
        assert!(!v.accepted);

        let garbage = MockChat::new(vec![MockRule::new(&[], "purple monkeys")]);
        let v = verify_gate("a", "b", &garbage, 0.5);
        assert!(!v.accepted);
        assert!(v.degraded);
    }

    #[test]
    fn numeric_scores_respect_tau() {
        let low = MockChat::new(vec![MockRule::new(&[], "0.3")]);
        assert!(!verify_gate("a", "b", &low, 0.5).accepted);
        let high = MockChat::new(vec![MockRule::new(&[], "0.9")]);
        let v = verify_gate("a", "b", &high, 0.5);
        assert!(v.accepted);
        assert_eq!(v.score, 0.9);
    }

    #[test]
    fn flat_all_no_counts_unordered_pairs() {
        let mut graph = flat_fixture(4);
        let chat = MockChat::new(vec![MockRule::new(&[], "none")]);
        let report = build_gates(&mut graph, &chat, 0.5, 2).unwrap();
        assert_eq!(report.gates.len(), 0);
        assert_eq!(report.call_count, 6); // C(4,2) unordered pairs
    }

    #[test]
    fn parent_gate_prunes_cross_children() {
        // 2 top modules, 2 children each; top pair verified causal.
        let mut graph = fixture(2, 2);
        let chat = MockChat::new(vec![
            MockRule::new(&["MOD m2:000", "MOD m2:001"], "both"),
            MockRule::new(&[], "none"),
        ]);
        let report = build_gates(&mut graph, &chat, 0.5, 2).unwrap();
        let covered: Vec<&GateCandidate> = report
            .candidates
            .iter()
            .filter(|c| c.reason_skipped == Some(SkipReason::CoveredByParentGate))
            .collect();
        assert_eq!(covered.len(), 4, "u x children(v) both ways");
        for c in &covered {
            assert!(c.verification.is_none());
        }
        let own: Vec<&GateCandidate> = report
            .candidates
            .iter()
            .filter(|c| c.reason_skipped == Some(SkipReason::OwnChild))
            .collect();
        assert_eq!(own.len(), 4);
        // calls: 1 top pair + 0 inter + C(4,2)=6 level-1 pairs
        assert_eq!(report.call_count, 7);
        assert!(report.call_count < report.exhaustive_pair_count);
    }

    #[test]
    fn no_connected_peers_means_only_own_children_pruned() {
        let mut graph = fixture(2, 2);
        let chat = MockChat::new(vec![MockRule::new(&[], "none")]);
        let report = build_gates(&mut graph, &chat, 0.5, 2).unwrap();
        // Each top sees the 2 children of the other top as live candidates.
        assert_eq!(report.call_count, 1 + 4 + 6);
        assert!(report
            .candidates
            .iter()
            .all(|c| c.reason_skipped != Some(SkipReason::CoveredByParentGate)));
    }

    #[test]
    fn single_module_level_has_no_intra_candidates() {
        let graph = flat_fixture(1);
        let candidates = enumerate_candidates(&graph, 1, &BTreeMap::new());
        assert!(candidates.intra.is_empty());
        assert!(candidates.inter.is_empty());
    }

    #[test]
    fn installed_gates_have_positive_provenance_and_no_duplicates() {
        let mut graph = fixture(2, 2);
        let chat = MockChat::new(vec![
            MockRule::new(&["MOD m2:000", "MOD m2:001"], "forward"),
            MockRule::new(&[], "none"),
        ]);
        let report = build_gates(&mut graph, &chat, 0.5, 2).unwrap();
        assert_eq!(report.gates.len(), 1);
        let gate = &report.gates[0];
        assert_eq!(gate.src, NodeId::new("m2:000"));
        assert_eq!(gate.dst, NodeId::new("m2:001"));
        assert!(gate.score >= 0.5);
        assert!(!gate.transcript_ref.is_empty());
        let mut pairs: Vec<(NodeId, NodeId)> = graph
            .gates
            .iter()
            .map(|g| (g.src.clone(), g.dst.clone()))
            .collect();
        pairs.sort();
        let before = pairs.len();
        pairs.dedup();
        assert_eq!(before, pairs.len());
        graph.validate().unwrap();
    }

    #[test]
    fn rerun_replaces_the_gate_set() {
        let mut graph = fixture(2, 2);
        let yes = MockChat::new(vec![MockRule::new(&[], "both")]);
        build_gates(&mut graph, &yes, 0.5, 2).unwrap();
        let first = graph.gates.len();
        assert!(first > 0);
        let no = MockChat::new(vec![MockRule::new(&[], "none")]);
        let report = build_gates(&mut graph, &no, 0.5, 2).unwrap();
        assert_eq!(report.gates.len(), 0);
        assert_eq!(graph.gates.len(), 0);
        assert!(graph.edges.iter().all(|e| e.kind != EdgeKind::CausalGate));
    }

    #[test]
    fn provider_failures_reject_but_do_not_abort() {
        let mut graph = flat_fixture(3);
        let chat = MockChat::strict();
        let report = build_gates(&mut graph, &chat, 0.5, 2).unwrap();
        assert_eq!(report.gates.len(), 0);
        assert_eq!(report.call_count, 3);
        assert_eq!(report.provider_failures, 3);
    }
}
