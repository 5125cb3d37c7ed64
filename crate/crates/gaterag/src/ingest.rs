//! Corpus ingestion: chunking, LLM-based open information extraction, and
//! assembly of the base entity graph.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ChunkingConfig, DedupConfig};
use crate::graph::{
    canonicalize_entities, Chunk, EdgeKind, EntityNode, GraphError, KnowledgeGraph, NodeId,
    RelationEdge,
};
use crate::prompts;
use crate::provider::{ChatProvider, ChatRequest, EmbeddingProvider, ProviderError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid chunking: chunk_chars {chunk_chars} must exceed overlap_chars {overlap_chars}")]
    InvalidChunking {
        chunk_chars: usize,
        overlap_chars: usize,
    },
    #[error("extraction response had no parseable lines: {raw_head}")]
    UnparseableExtraction { raw_head: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedEntity {
    pub name: String,
    pub type_tag: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedRelation {
    pub src: String,
    pub dst: String,
    pub description: String,
    pub strength: f64,
}

/// Parsed output of one extraction call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub chunk_id: String,
    pub entities: Vec<ExtractedEntity>,
    pub relations: Vec<ExtractedRelation>,
    /// Lines the parser had to skip.
    pub skipped_lines: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: usize,
    pub empty_documents: Vec<String>,
    pub chunks: usize,
    pub raw_entities: usize,
    pub merged_entities: usize,
    pub edges: usize,
    pub skipped_extraction_lines: usize,
    pub dropped_relations: Vec<String>,
}

/// Splits documents into fixed-size chunks with the configured overlap.
/// Spans are character offsets into the document. Empty documents yield no
/// chunks and are reported.
pub fn chunk_corpus(
    docs: &[(String, String)],
    config: &ChunkingConfig,
    report: &mut IngestReport,
) -> Result<Vec<Chunk>, IngestError> {
    if config.chunk_chars == 0 || config.chunk_chars <= config.overlap_chars {
        return Err(IngestError::InvalidChunking {
            chunk_chars: config.chunk_chars,
            overlap_chars: config.overlap_chars,
        });
    }
    report.documents = docs.len();
    let stride = config.chunk_chars - config.overlap_chars;
    let mut chunks = Vec::new();
    for (doc_id, text) in docs {
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            log::warn!("document {doc_id} is empty, producing no chunks");
            report.empty_documents.push(doc_id.clone());
            continue;
        }
        let mut start = 0usize;
        let mut index = 0usize;
        loop {
            let end = (start + config.chunk_chars).min(chars.len());
            chunks.push(Chunk {
                id: format!("{doc_id}#c{index}"),
                doc_id: doc_id.clone(),
                text: chars[start..end].iter().collect(),
                char_span: (start, end),
            });
            if end == chars.len() {
                break;
            }
            start += stride;
            index += 1;
        }
    }
    report.chunks = chunks.len();
    Ok(chunks)
}

/// Runs the extraction prompt for one chunk and parses the tuple-per-line
/// response. Malformed lines are skipped and counted; a response with content
/// but no parseable line at all is an error.
pub fn extract_chunk(
    chunk: &Chunk,
    provider: &dyn ChatProvider,
) -> Result<ExtractionRecord, IngestError> {
    let (system, user) = prompts::extraction_prompt(&chunk.text);
    let response = provider.chat(&ChatRequest::new(system, user))?;
    parse_extraction(&chunk.id, &response.text)
}

pub(crate) fn parse_extraction(chunk_id: &str, raw: &str) -> Result<ExtractionRecord, IngestError> {
    let mut record = ExtractionRecord {
        chunk_id: chunk_id.to_string(),
        entities: Vec::new(),
        relations: Vec::new(),
        skipped_lines: 0,
    };
    let mut nonempty_lines = 0usize;
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        nonempty_lines += 1;
        match parse_line(line) {
            Some(ParsedLine::Entity(e)) => record.entities.push(e),
            Some(ParsedLine::Relation(r)) => record.relations.push(r),
            None => record.skipped_lines += 1,
        }
    }
    if nonempty_lines > 0 && record.entities.is_empty() && record.relations.is_empty() {
        return Err(IngestError::UnparseableExtraction {
            raw_head: raw.chars().take(120).collect(),
        });
    }
    Ok(record)
}

enum ParsedLine {
    Entity(ExtractedEntity),
    Relation(ExtractedRelation),
}

fn parse_line(line: &str) -> Option<ParsedLine> {
    let inner = line.strip_prefix('(')?.strip_suffix(')')?;
    let fields: Vec<&str> = inner.split('|').map(str::trim).collect();
    let tag = fields.first()?.trim_matches('"');
    match tag {
        "entity" if fields.len() == 4 => {
            let name = fields[1].to_string();
            if name.is_empty() {
                return None;
            }
            Some(ParsedLine::Entity(ExtractedEntity {
                name,
                type_tag: fields[2].to_string(),
                description: fields[3].to_string(),
            }))
        }
        "relationship" if fields.len() == 5 => {
            let strength: f64 = fields[4].parse().ok()?;
            if fields[1].is_empty() || fields[2].is_empty() || strength < 0.0 {
                return None;
            }
            Some(ParsedLine::Relation(ExtractedRelation {
                src: fields[1].to_string(),
                dst: fields[2].to_string(),
                description: fields[3].to_string(),
                strength,
            }))
        }
        _ => None,
    }
}

/// Extracts every chunk, with bounded parallelism. Results come back in
/// chunk order regardless of completion order.
pub fn extract_all(
    chunks: &[Chunk],
    provider: &dyn ChatProvider,
    max_in_flight: usize,
) -> Result<Vec<ExtractionRecord>, IngestError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        chunks
            .par_iter()
            .map(|chunk| extract_chunk(chunk, provider))
            .collect()
    })
}

/// Assembles the base entity graph from extraction records: embeds raw
/// entities, canonicalizes them, and installs structural edges mapped through
/// the merge map. Relations whose endpoints stay unresolvable are dropped
/// into the report.
pub fn build_base_graph(
    records: &[ExtractionRecord],
    chunks: &[Chunk],
    embedder: &dyn EmbeddingProvider,
    dedup: &DedupConfig,
    report: &mut IngestReport,
) -> Result<KnowledgeGraph, IngestError> {
    // Raw nodes, one per extracted entity line, ids by position.
    let mut raw_nodes: Vec<EntityNode> = Vec::new();
    // (record index, extracted name) -> raw id, first occurrence wins.
    let mut local_names: BTreeMap<(usize, String), NodeId> = BTreeMap::new();
    for (rec_idx, record) in records.iter().enumerate() {
        for entity in &record.entities {
            let raw_id = NodeId::new(format!("r{}", raw_nodes.len()));
            local_names
                .entry((rec_idx, entity.name.to_lowercase()))
                .or_insert_with(|| raw_id.clone());
            raw_nodes.push(EntityNode {
                id: raw_id,
                name: entity.name.clone(),
                description: entity.description.clone(),
                aliases: Default::default(),
                source_chunks: [record.chunk_id.clone()].into_iter().collect(),
                embedding: Vec::new(),
            });
        }
        report.skipped_extraction_lines += record.skipped_lines;
    }
    report.raw_entities = raw_nodes.len();

    let texts: Vec<String> = raw_nodes
        .iter()
        .map(|n| format!("{}: {}", n.name, n.description))
        .collect();
    let text_refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let embeddings = embedder.embed(&text_refs)?;
    for (node, embedding) in raw_nodes.iter_mut().zip(embeddings) {
        node.embedding = embedding;
    }

    let canonical = canonicalize_entities(&raw_nodes, dedup.fuzzy_threshold, dedup.embed_threshold)?;
    report.merged_entities = canonical.nodes.len();

    // Final ids: a slug of the canonical name, disambiguated when two
    // canonical nodes normalize to the same slug.
    let mut slug_for: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    let mut graph = KnowledgeGraph::new(embedder.dimension());
    for chunk in chunks {
        graph.add_chunk(chunk.clone());
    }
    for node in &canonical.nodes {
        let base = slug(&node.name);
        let count = used.entry(base.clone()).or_insert(0);
        let id = if *count == 0 {
            NodeId::new(format!("e:{base}"))
        } else {
            NodeId::new(format!("e:{base}-{count}"))
        };
        *count += 1;
        slug_for.insert(node.id.clone(), id.clone());
        let mut finalized = node.clone();
        finalized.id = id;
        graph.add_entity(finalized)?;
    }

    // name (lowercased) -> final id, for cross-record endpoint resolution.
    let mut by_name: BTreeMap<String, NodeId> = BTreeMap::new();
    for entity in graph.entities.values() {
        by_name.entry(entity.name.to_lowercase()).or_insert_with(|| entity.id.clone());
        for alias in &entity.aliases {
            by_name.entry(alias.to_lowercase()).or_insert_with(|| entity.id.clone());
        }
    }
    let resolve = |rec_idx: usize, name: &str| -> Option<NodeId> {
        let key = (rec_idx, name.to_lowercase());
        if let Some(raw_id) = local_names.get(&key) {
            let rep = canonical.merge_map.get(raw_id)?;
            return slug_for.get(rep).cloned();
        }
        by_name.get(&name.to_lowercase()).cloned()
    };

    let mut edges: Vec<RelationEdge> = Vec::new();
    for (rec_idx, record) in records.iter().enumerate() {
        for relation in &record.relations {
            let (src, dst) = match (
                resolve(rec_idx, &relation.src),
                resolve(rec_idx, &relation.dst),
            ) {
                (Some(s), Some(d)) => (s, d),
                _ => {
                    report.dropped_relations.push(format!(
                        "{}: {} -> {} (unresolvable endpoint)",
                        record.chunk_id, relation.src, relation.dst
                    ));
                    continue;
                }
            };
            if src == dst {
                report.dropped_relations.push(format!(
                    "{}: {} -> {} (endpoints merged)",
                    record.chunk_id, relation.src, relation.dst
                ));
                continue;
            }
            edges.push(RelationEdge {
                src,
                dst,
                description: relation.description.clone(),
                kind: EdgeKind::Structural,
                weight_hint: relation.strength,
            });
        }
    }
    edges.sort_by(|a, b| {
        a.src
            .cmp(&b.src)
            .then(a.dst.cmp(&b.dst))
            .then(a.description.cmp(&b.description))
    });
    edges.dedup();
    for edge in edges {
        graph.add_edge(edge)?;
    }
    report.edges = graph.edges.len();
    Ok(graph)
}

fn slug(name: &str) -> String {
    let normalized = crate::graph::normalize_name(name);
    if normalized.is_empty() {
        "unnamed".to_string()
    } else {
        normalized.replace(' ', "-")
    }
}
