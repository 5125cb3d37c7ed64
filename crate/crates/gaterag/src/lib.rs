//! Gated graph retrieval: organizes a text corpus into a layered knowledge
//! graph whose modules are linked by LLM-verified causal gates, then answers
//! queries by gated best-first subgraph retrieval, causal evidence filtering
//! and grounded generation.
//!
//! Offline, `ingest` extracts a base entity graph from chunked documents,
//! `hierarchy` partitions it into module layers with summaries, and `gates`
//! verifies sparse causal links between modules with top-down pruning.
//! Online, `retrieval` seeds across levels and expands along structural,
//! hierarchical and gate edges; `reasoning` prunes the retrieved subgraph to
//! its causal core and generates the answer from that evidence alone.
//! `eval` measures answer F1 and structural retrieval quality, including a
//! paired gate-off/gate-on comparison. Everything model-facing sits behind
//! the `provider` traits, so the full pipeline runs offline on mocks and
//! recorded transcripts.

pub mod config;
pub mod eval;
pub mod gates;
pub mod graph;
pub mod hierarchy;
pub mod ingest;
pub mod pipeline;
pub mod prompts;
pub mod provider;
pub mod reasoning;
pub mod retrieval;

pub use config::{ExpansionConfig, HybridScoreConfig, PipelineConfig, ProviderMode, SelectionMode};
pub use graph::{
    load_graph, save_graph, Chunk, EdgeKind, EntityNode, GraphError, KnowledgeGraph, ModuleNode,
    NodeId, RelationEdge,
};
pub use pipeline::{
    export_graph, load_corpus, run_ab_test, run_build, run_gates, run_query, ExportFormat,
    PipelineError, Providers,
};
