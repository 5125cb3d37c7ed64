//! End-to-end orchestration of build, gate construction, querying, A/B
//! evaluation and export, with provider wiring from the configuration.
//! Every artifact embeds the fully resolved config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::{PipelineConfig, ProviderMode, SelectionMode};
use crate::eval::{ab_report_csv, answer_table_csv, gate_ab_test, token_f1, AbReport, QAExample};
use crate::gates::{build_gates, GateError, GateReport};
use crate::graph::{save_graph, EdgeKind, GraphError, KnowledgeGraph};
use crate::hierarchy::{build_hierarchy, HierarchyError, HierarchyReport};
use crate::ingest::{build_base_graph, chunk_corpus, extract_all, IngestError, IngestReport};
use crate::provider::{
    ChatProvider, ChatRequest, ChatResponse, HashEmbedder, HttpChat, MockChat, MockRule,
    ProviderError, RecordingChat, ReplayChat, Transcript,
};
use crate::reasoning::{
    generate_answer, linearize, reconstruct, select_causal, CausalSelection, ReasoningError,
};
use crate::retrieval::{
    gated_expand, score_query, select_seeds, RetrievalError, RetrievalResult, SeedPick,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("data: {0}")]
    Data(String),
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::InvalidChunking { .. } => PipelineError::Config(e.to_string()),
            IngestError::Provider(p) => PipelineError::Provider(p),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<HierarchyError> for PipelineError {
    fn from(e: HierarchyError) -> Self {
        match e {
            HierarchyError::Provider(p) => PipelineError::Provider(p),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<GateError> for PipelineError {
    fn from(e: GateError) -> Self {
        match e {
            GateError::Provider(p) => PipelineError::Provider(p),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<GraphError> for PipelineError {
    fn from(e: GraphError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<RetrievalError> for PipelineError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Provider(p) => PipelineError::Provider(p),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<ReasoningError> for PipelineError {
    fn from(e: ReasoningError) -> Self {
        match e {
            ReasoningError::Provider(p) => PipelineError::Provider(p),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<crate::eval::EvalError> for PipelineError {
    fn from(e: crate::eval::EvalError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

/// Chat + embedding providers resolved from the config, with optional
/// transcript recording.
pub struct Providers {
    chat: ChatBackend,
    pub embedder: HashEmbedder,
    record_to: Option<PathBuf>,
}

enum ChatBackend {
    Plain(Box<dyn ChatProvider>),
    Recording(RecordingChat<Box<dyn ChatProvider>>),
}

/// Mock script file: ordered rules plus an optional default response.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_response: Option<String>,
}

impl Providers {
    pub fn from_config(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let provider = &config.provider;
        let inner: Box<dyn ChatProvider> = match provider.mode {
            ProviderMode::Mock => {
                let mock = match &provider.mock_script {
                    Some(path) => {
                        let raw = std::fs::read_to_string(path).map_err(|e| {
                            PipelineError::Config(format!("mock script {path}: {e}"))
                        })?;
                        let script: MockScript = serde_json::from_str(&raw).map_err(|e| {
                            PipelineError::Config(format!("mock script {path}: {e}"))
                        })?;
                        let m = MockChat::new(script.rules);
                        match script.default_response {
                            Some(default) => m.with_default(default),
                            None => m,
                        }
                    }
                    None => MockChat::strict(),
                };
                Box::new(mock)
            }
            ProviderMode::Replay => {
                let path = provider.transcript.as_ref().ok_or_else(|| {
                    PipelineError::Config("replay mode requires provider.transcript".into())
                })?;
                Box::new(ReplayChat::from_file(Path::new(path))?)
            }
            ProviderMode::Live => Box::new(HttpChat::new(provider.http.clone())?),
        };
        let record_to = if provider.record {
            let path = provider.transcript.as_ref().ok_or_else(|| {
                PipelineError::Config("recording requires provider.transcript".into())
            })?;
            Some(PathBuf::from(path))
        } else {
            None
        };
        let chat = match record_to {
            Some(_) => ChatBackend::Recording(RecordingChat::new(inner)),
            None => ChatBackend::Plain(inner),
        };
        Ok(Providers {
            chat,
            embedder: HashEmbedder::new(provider.embedding_dim),
            record_to,
        })
    }

    /// Wraps externally constructed providers (used by tests that
    /// instrument the chat provider).
    pub fn from_parts(chat: Box<dyn ChatProvider>, embedder: HashEmbedder) -> Self {
        Providers {
            chat: ChatBackend::Plain(chat),
            embedder,
            record_to: None,
        }
    }

    pub fn chat(&self) -> &dyn ChatProvider {
        match &self.chat {
            ChatBackend::Plain(p) => p.as_ref(),
            ChatBackend::Recording(r) => r,
        }
    }

    pub fn network_calls(&self) -> u64 {
        self.chat().network_calls()
    }

    /// Writes the recorded transcript if recording was requested.
    pub fn flush_transcript(&self) -> Result<(), PipelineError> {
        if let (Some(path), ChatBackend::Recording(recorder)) = (&self.record_to, &self.chat) {
            recorder.save(path)?;
        }
        Ok(())
    }

    /// The recorded transcript so far, when recording.
    pub fn transcript(&self) -> Option<Transcript> {
        match &self.chat {
            ChatBackend::Recording(r) => Some(r.transcript()),
            ChatBackend::Plain(_) => None,
        }
    }
}

impl ChatProvider for Box<dyn ChatProvider> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.as_ref().chat(request)
    }

    fn network_calls(&self) -> u64 {
        self.as_ref().network_calls()
    }
}

/// Loads a corpus: either a directory of `.txt` files (doc_id = file stem,
/// sorted) or a JSON-lines file of `{doc_id, text}` objects.
pub fn load_corpus(path: &Path) -> Result<Vec<(String, String)>, PipelineError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| PipelineError::Data(format!("corpus dir {}: {e}", path.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().map_or(false, |ext| ext == "txt"))
            .collect();
        files.sort();
        let mut docs = Vec::new();
        for file in files {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", file.display())))?;
            let doc_id = file
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("doc")
                .to_string();
            docs.push((doc_id, text));
        }
        Ok(docs)
    } else {
        #[derive(Deserialize)]
        struct DocLine {
            doc_id: String,
            text: String,
        }
        let raw = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Data(format!("corpus {}: {e}", path.display())))?;
        let mut docs = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: DocLine = serde_json::from_str(line)
                .map_err(|e| PipelineError::Data(format!("corpus line {}: {e}", i + 1)))?;
            docs.push((doc.doc_id, doc.text));
        }
        Ok(docs)
    }
}

#[derive(Debug, Serialize)]
pub struct BuildArtifacts {
    pub ingest: IngestReport,
    pub hierarchy: HierarchyReport,
    pub network_calls: u64,
}

/// Offline phase: chunk, extract, canonicalize, build the hierarchy and
/// summaries. Returns the graph plus stage reports.
pub fn run_build(
    docs: &[(String, String)],
    config: &PipelineConfig,
    providers: &Providers,
) -> Result<(KnowledgeGraph, BuildArtifacts), PipelineError> {
    if docs.is_empty() {
        return Err(PipelineError::Data("corpus is empty".into()));
    }
    let mut ingest_report = IngestReport::default();
    let chunks = chunk_corpus(docs, &config.chunking, &mut ingest_report)?;
    if chunks.is_empty() {
        return Err(PipelineError::Data("corpus produced no chunks".into()));
    }
    let records = extract_all(&chunks, providers.chat(), config.provider.max_in_flight)?;
    let mut graph = build_base_graph(
        &records,
        &chunks,
        &providers.embedder,
        &config.dedup,
        &mut ingest_report,
    )?;
    let hierarchy_report = build_hierarchy(
        &mut graph,
        providers.chat(),
        &providers.embedder,
        &config.hierarchy,
        config.provider.max_in_flight,
    )?;
    graph.validate()?;
    Ok((
        graph,
        BuildArtifacts {
            ingest: ingest_report,
            hierarchy: hierarchy_report,
            network_calls: providers.network_calls(),
        },
    ))
}

/// Gate phase: verify candidate module pairs and install the gate set.
pub fn run_gates(
    graph: &mut KnowledgeGraph,
    config: &PipelineConfig,
    providers: &Providers,
) -> Result<GateReport, PipelineError> {
    let report = build_gates(
        graph,
        providers.chat(),
        config.gates.tau,
        config.provider.max_in_flight,
    )?;
    graph.validate()?;
    Ok(report)
}

/// Full audit bundle for one query.
#[derive(Debug, Serialize)]
pub struct QueryAudit {
    pub question: String,
    pub answer: String,
    pub abstained: bool,
    pub gates_enabled: bool,
    pub selection_mode: SelectionMode,
    pub seeds: Vec<SeedPick>,
    pub retrieval: RetrievalResult,
    /// Short-id table shown to the selection prompt.
    pub linearized_rows: Vec<crate::reasoning::LinearRow>,
    pub selection: CausalSelection,
    /// Node ids retained in the pruned subgraph.
    pub pruned_nodes: Vec<crate::graph::NodeId>,
    /// Evidence short ids shown to the generator.
    pub evidence_ids: Vec<String>,
    pub network_calls: u64,
    pub config: Value,
}

/// Online phase: seed, expand, linearize, select, generate. Gates may be
/// disabled per query; a graph without gates proceeds with a warning.
pub fn run_query(
    graph: &KnowledgeGraph,
    question: &str,
    config: &PipelineConfig,
    providers: &Providers,
    gates_enabled: bool,
    mode_override: Option<SelectionMode>,
) -> Result<QueryAudit, PipelineError> {
    if gates_enabled && graph.gates.is_empty() {
        log::warn!("graph has no causal gates; proceeding without them");
    }
    let scores = score_query(question, graph, &config.scoring, &providers.embedder)?;
    let (seeds, _diagnostics) = select_seeds(graph, &scores, &config.expansion);
    let retrieval = gated_expand(graph, &seeds, &scores, &config.expansion, gates_enabled)?;
    let lin = linearize(graph, &retrieval)?;
    let mode = mode_override.unwrap_or(config.selection_mode);
    let mut selection = select_causal(&lin, question, providers.chat(), mode);
    let pruned = reconstruct(graph, &lin, &mut selection);
    let generated = generate_answer(question, &lin, &selection, providers.chat())?;
    Ok(QueryAudit {
        question: question.to_string(),
        answer: generated.answer,
        abstained: generated.abstained,
        gates_enabled,
        selection_mode: mode,
        seeds,
        retrieval,
        linearized_rows: lin.rows.clone(),
        selection,
        pruned_nodes: pruned.nodes.into_iter().collect(),
        evidence_ids: generated.evidence_ids,
        network_calls: providers.network_calls(),
        config: config.provenance(),
    })
}

#[derive(Debug, Serialize)]
pub struct AbArtifacts {
    pub report: AbReport,
    pub csv: String,
    /// Answer-quality table (token F1 + judge placeholders); present when
    /// answer generation was requested.
    pub answers_csv: Option<String>,
    pub mean_f1: Option<f64>,
    pub config: Value,
}

/// Paired gate-off/gate-on structural evaluation over a QA set, optionally
/// also generating answers to score token F1.
pub fn run_ab_test(
    graph: &KnowledgeGraph,
    examples: &[QAExample],
    config: &PipelineConfig,
    providers: &Providers,
    with_answers: bool,
) -> Result<AbArtifacts, PipelineError> {
    if graph.gates.is_empty() {
        log::warn!("graph has no gates; off and on arms will be identical");
    }
    let report = gate_ab_test(
        graph,
        examples,
        &config.scoring,
        &config.expansion,
        &config.eval,
        &providers.embedder,
    )?;
    let csv = ab_report_csv(&report);
    let (answers_csv, mean_f1) = if with_answers {
        let mut f1s = Vec::new();
        for example in examples {
            let audit = run_query(graph, &example.question, config, providers, true, None)?;
            f1s.push(token_f1(&audit.answer, &example.gold_answer));
        }
        let mean = if f1s.is_empty() {
            None
        } else {
            Some(f1s.iter().sum::<f64>() / f1s.len() as f64)
        };
        (Some(answer_table_csv("fixture", mean)), mean)
    } else {
        (None, None)
    };
    Ok(AbArtifacts {
        report,
        csv,
        answers_csv,
        mean_f1,
        config: config.provenance(),
    })
}

/// Export formats for external viewers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    /// Tab-separated `node`/`edge` lines.
    EdgeList,
    /// A single JSON object with `nodes` and `edges` arrays.
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edgelist" => Ok(ExportFormat::EdgeList),
            "json" => Ok(ExportFormat::Json),
            other => Err(format!("unknown export format: {other}")),
        }
    }
}

/// Emits a generic node/edge list. `gate_sample` in (0,1] keeps an evenly
/// spaced representative subset of ceil(r * |gates|) gate edges; structural
/// and hierarchical edges are always complete.
pub fn export_graph(
    graph: &KnowledgeGraph,
    format: ExportFormat,
    gate_sample: Option<f64>,
) -> Result<String, PipelineError> {
    if let Some(r) = gate_sample {
        if !(0.0..=1.0).contains(&r) {
            return Err(PipelineError::Config(format!(
                "gate sample ratio {r} outside [0, 1]"
            )));
        }
    }
    let gate_indices: Vec<usize> = graph
        .edges
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EdgeKind::CausalGate)
        .map(|(i, _)| i)
        .collect();
    let kept_gates: std::collections::BTreeSet<usize> = match gate_sample {
        Some(r) if r < 1.0 => {
            let n = gate_indices.len();
            let k = (r * n as f64).ceil() as usize;
            (0..k).map(|i| gate_indices[i * n / k.max(1)]).collect()
        }
        _ => gate_indices.iter().copied().collect(),
    };

    let node_rows: Vec<(String, u32, String)> = graph
        .entities
        .values()
        .map(|e| (e.id.to_string(), 0, e.name.clone()))
        .chain(
            graph
                .modules
                .values()
                .map(|m| (m.id.to_string(), m.level, format!("module level {}", m.level))),
        )
        .collect();
    let edge_rows: Vec<(String, String, String)> = graph
        .edges
        .iter()
        .enumerate()
        .filter(|(i, e)| e.kind != EdgeKind::CausalGate || kept_gates.contains(i))
        .map(|(_, e)| (e.src.to_string(), e.dst.to_string(), e.kind.to_string()))
        .collect();

    match format {
        ExportFormat::EdgeList => {
            let mut out = String::new();
            for (id, level, label) in &node_rows {
                out.push_str(&format!("node\t{id}\t{level}\t{label}\n"));
            }
            for (src, dst, kind) in &edge_rows {
                out.push_str(&format!("edge\t{src}\t{dst}\t{kind}\n"));
            }
            Ok(out)
        }
        ExportFormat::Json => {
            let nodes: Vec<Value> = node_rows
                .iter()
                .map(|(id, level, label)| {
                    serde_json::json!({"id": id, "level": level, "label": label})
                })
                .collect();
            let edges: Vec<Value> = edge_rows
                .iter()
                .map(|(src, dst, kind)| {
                    serde_json::json!({"source": src, "target": dst, "kind": kind})
                })
                .collect();
            let doc = serde_json::json!({"nodes": nodes, "edges": edges});
            Ok(serde_json::to_string_pretty(&doc).expect("export serializes"))
        }
    }
}

/// Serializes an artifact (with embedded config) as stable pretty JSON.
pub fn to_stable_json<T: Serialize>(artifact: &T) -> String {
    serde_json::to_string_pretty(artifact).expect("artifact serializes")
}

/// Saves a graph with the config embedded for provenance.
pub fn save_graph_with_config(
    graph: &KnowledgeGraph,
    config: &PipelineConfig,
    path: &Path,
) -> Result<(), PipelineError> {
    save_graph(graph, Some(&config.provenance()), path)?;
    Ok(())
}
