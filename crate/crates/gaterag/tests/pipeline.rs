//! End-to-end integration over the fixture corpus: build, gates, query,
//! replay determinism and the gate A/B report.

mod common;

use gaterag::config::{PipelineConfig, ProviderMode};
use gaterag::eval::QAExample;
use gaterag::graph::NodeId;
use gaterag::pipeline::{
    run_ab_test, run_build, run_gates, run_query, save_graph_with_config, to_stable_json,
    Providers,
};
use gaterag::EdgeKind;

fn mock_config(script_path: &std::path::Path) -> PipelineConfig {
    let mut config = PipelineConfig::default();
    config.provider.mode = ProviderMode::Mock;
    config.provider.mock_script = Some(script_path.display().to_string());
    config
}

#[test]
fn build_produces_expected_graph_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (_, script) = common::write_fixtures(dir.path());
    let config = mock_config(&script);
    let providers = Providers::from_config(&config).unwrap();
    let docs = common::fixture_corpus();
    let (graph, artifacts) = run_build(&docs, &config, &providers).unwrap();

    // 9 canonical entities, 3 one-chunk documents, 6 structural edges.
    assert_eq!(graph.chunks.len(), 3);
    assert_eq!(graph.entities.len(), 9);
    assert_eq!(
        graph
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Structural)
            .count(),
        6
    );
    assert_eq!(graph.level_count, 1);
    assert_eq!(graph.nodes_at_level(1).len(), 3);
    graph.validate().unwrap();
    assert_eq!(artifacts.network_calls, 0);
    assert_eq!(artifacts.ingest.raw_entities, 9);

    // The three clusters never share a module.
    for module in graph.modules.values() {
        let names: Vec<&str> = module.member_ids.iter().map(|m| m.as_str()).collect();
        let grid = names.iter().any(|n| n.contains("ice-storm"));
        let hospital = names.iter().any(|n| n.contains("mercy-hospital"));
        let bakery = names.iter().any(|n| n.contains("riverside-bakery"));
        assert_eq!(
            [grid, hospital, bakery].iter().filter(|&&b| b).count(),
            1,
            "module {} mixes clusters: {names:?}",
            module.id
        );
    }
}

#[test]
fn gates_install_only_the_scripted_causal_pair() {
    let dir = tempfile::tempdir().unwrap();
    let (_, script) = common::write_fixtures(dir.path());
    let config = mock_config(&script);
    let providers = Providers::from_config(&config).unwrap();
    let (mut graph, _) = run_build(&common::fixture_corpus(), &config, &providers).unwrap();

    let report = run_gates(&mut graph, &config, &providers).unwrap();
    assert_eq!(report.gates.len(), 1, "{:?}", report.gates);
    assert_eq!(report.call_count, 3); // C(3,2) intra pairs at the only level
    let gate = &graph.gates[0];
    let endpoint_summaries = [
        graph.modules[&gate.src].summary.as_str(),
        graph.modules[&gate.dst].summary.as_str(),
    ];
    assert!(endpoint_summaries.iter().any(|s| s.contains("transmission grid")));
    assert!(endpoint_summaries.iter().any(|s| s.contains("backup generator")));
    assert!(gate.score >= config.gates.tau);
    assert!(!gate.transcript_ref.is_empty());

    // Re-running replaces rather than duplicates.
    let report2 = run_gates(&mut graph, &config, &providers).unwrap();
    assert_eq!(report2.gates.len(), 1);
    assert_eq!(graph.gates.len(), 1);
}

#[test]
fn query_crosses_the_gate_and_grounds_the_answer() {
    let dir = tempfile::tempdir().unwrap();
    let (_, script) = common::write_fixtures(dir.path());
    let config = mock_config(&script);
    let providers = Providers::from_config(&config).unwrap();
    let (mut graph, _) = run_build(&common::fixture_corpus(), &config, &providers).unwrap();
    run_gates(&mut graph, &config, &providers).unwrap();

    let audit = run_query(
        &graph,
        common::FIXTURE_QUESTION,
        &config,
        &providers,
        true,
        None,
    )
    .unwrap();
    assert_eq!(audit.answer, common::FIXTURE_ANSWER);
    assert!(!audit.abstained);
    assert_eq!(audit.network_calls, 0);

    // Pruning monotonicity: the pruned set is a subset of the retrieved set.
    let visited: std::collections::BTreeSet<&NodeId> = audit.retrieval.visited.keys().collect();
    for node in &audit.pruned_nodes {
        assert!(visited.contains(node), "{node} pruned in but never visited");
    }
    // The scripted ct_precise id is excluded from the pruned subgraph.
    assert_eq!(audit.selection.ct_precise, vec!["N3".to_string()]);
    let n3 = audit
        .linearized_rows
        .iter()
        .position(|r| r.id == "N3")
        .expect("N3 row exists");
    assert!(n3 < audit.linearized_rows.len());
    // Evidence shown to the generator is exactly the selected rows.
    for id in &audit.evidence_ids {
        assert!(audit.selection.precise.contains(id));
    }
}

#[test]
fn no_gates_flag_shrinks_reachability() {
    let dir = tempfile::tempdir().unwrap();
    let (_, script) = common::write_fixtures(dir.path());
    let mut config = mock_config(&script);
    // Seed narrowly inside the grid cluster so only the gate can bridge to
    // the hospital cluster, and drop the gain floor so low-scoring but
    // causally linked evidence stays admissible.
    config.expansion.seeds_entity = 2;
    config.expansion.seeds_top_module = 0;
    config.expansion.gain_floor = 0.0;
    let providers = Providers::from_config(&config).unwrap();
    let (mut graph, _) = run_build(&common::fixture_corpus(), &config, &providers).unwrap();
    run_gates(&mut graph, &config, &providers).unwrap();

    let question = "what did the ice storm do to the transmission lines";
    let with_gates = run_query(&graph, question, &config, &providers, true, None).unwrap();
    let without_gates = run_query(&graph, question, &config, &providers, false, None).unwrap();
    assert!(
        with_gates.retrieval.visited.len() > without_gates.retrieval.visited.len(),
        "with: {:?}, without: {:?}",
        with_gates.retrieval.visit_order,
        without_gates.retrieval.visit_order
    );
    assert!(with_gates.retrieval.stats.gate_crossings >= 1);
    assert_eq!(without_gates.retrieval.stats.gate_crossings, 0);
    // The hospital cluster is reachable only through the gate.
    let hospital = NodeId::new("e:mercy-hospital");
    assert!(with_gates.retrieval.visited.contains_key(&hospital));
    assert!(!without_gates.retrieval.visited.contains_key(&hospital));
}

#[test]
fn record_then_replay_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (_, script) = common::write_fixtures(dir.path());
    let transcript_path = dir.path().join("transcript.jsonl");
    let docs = common::fixture_corpus();

    // Recording run against the mock produces the transcript.
    let mut record_config = mock_config(&script);
    record_config.provider.record = true;
    record_config.provider.transcript = Some(transcript_path.display().to_string());
    {
        let providers = Providers::from_config(&record_config).unwrap();
        let (mut graph, _) = run_build(&docs, &record_config, &providers).unwrap();
        run_gates(&mut graph, &record_config, &providers).unwrap();
        run_query(&graph, common::FIXTURE_QUESTION, &record_config, &providers, true, None)
            .unwrap();
        providers.flush_transcript().unwrap();
    }

    // Five replay runs must agree with each other byte for byte on the
    // graph file, the gate report, and the answer audit.
    let mut replay_config = record_config.clone();
    replay_config.provider.mode = ProviderMode::Replay;
    replay_config.provider.record = false;
    replay_config.provider.mock_script = None;

    let mut reference: Option<(Vec<u8>, String, String)> = None;
    for run in 0..5 {
        let providers = Providers::from_config(&replay_config).unwrap();
        let (mut graph, _) = run_build(&docs, &replay_config, &providers).unwrap();
        let gate_report = run_gates(&mut graph, &replay_config, &providers).unwrap();
        let audit =
            run_query(&graph, common::FIXTURE_QUESTION, &replay_config, &providers, true, None)
                .unwrap();
        let path = dir.path().join(format!("graph-{run}.json"));
        save_graph_with_config(&graph, &replay_config, &path).unwrap();
        let bundle = (
            std::fs::read(&path).unwrap(),
            to_stable_json(&gate_report),
            to_stable_json(&audit),
        );
        assert_eq!(providers.network_calls(), 0);
        match &reference {
            None => reference = Some(bundle),
            Some(expected) => {
                assert_eq!(expected.0, bundle.0, "graph bytes differ on run {run}");
                assert_eq!(expected.1, bundle.1, "gate report differs on run {run}");
                assert_eq!(expected.2, bundle.2, "audit differs on run {run}");
            }
        }
    }
}

#[test]
fn ab_test_over_fixture_reports_gate_advantage() {
    let dir = tempfile::tempdir().unwrap();
    let (_, script) = common::write_fixtures(dir.path());
    let config = mock_config(&script);
    let providers = Providers::from_config(&config).unwrap();
    let (mut graph, _) = run_build(&common::fixture_corpus(), &config, &providers).unwrap();
    run_gates(&mut graph, &config, &providers).unwrap();

    let examples = vec![
        QAExample {
            id: "q-surgeries".into(),
            question: "what followed the ice storm power outage in the northern district".into(),
            gold_answer: "surgeries were postponed".into(),
            gold_context: vec!["scheduled surgeries".into()],
            gold_node_ids: None,
        },
        QAExample {
            id: "q-festival".into(),
            question: "what did the riverside bakery sourdough festival support".into(),
            gold_answer: "the community kitchen".into(),
            gold_context: vec!["community kitchen".into()],
            gold_node_ids: None,
        },
    ];
    let artifacts = run_ab_test(&graph, &examples, &config, &providers, true).unwrap();
    assert_eq!(artifacts.report.included, 2);
    assert!(artifacts.report.on.reachability.mean >= artifacts.report.off.reachability.mean);
    assert!(artifacts.csv.contains("reachability"));
    let answers = artifacts.answers_csv.expect("answers requested");
    assert!(answers.contains("requires judge provider"));

    // Seeded rerun reproduces the report exactly.
    let artifacts2 = run_ab_test(&graph, &examples, &config, &providers, false).unwrap();
    assert_eq!(to_stable_json(&artifacts.report), to_stable_json(&artifacts2.report));
}
