//! Pipeline configuration. Every knob has an explicit default and the fully
//! resolved config is embedded in every output artifact for provenance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::EdgeKind;
use crate::provider::HttpChatConfig;

/// Where model calls go: a live HTTP endpoint, a scripted mock, or a recorded
/// transcript replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Live,
    Mock,
    Replay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    pub http: HttpChatConfig,
    /// Mock script file (JSON list of rules); used in mock mode.
    pub mock_script: Option<String>,
    /// Transcript to replay, or to write when recording a live run.
    pub transcript: Option<String>,
    /// Record live responses to `transcript`.
    pub record: bool,
    /// Embedding dimension of the hashing embedder.
    pub embedding_dim: usize,
    /// Upper bound on in-flight requests during batch phases.
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            mode: ProviderMode::Mock,
            http: HttpChatConfig::default(),
            mock_script: None,
            transcript: None,
            record: false,
            embedding_dim: 64,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingConfig {
    pub chunk_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        ChunkingConfig {
            chunk_chars: 1200,
            overlap_chars: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub fuzzy_threshold: f64,
    pub embed_threshold: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            fuzzy_threshold: 0.85,
            embed_threshold: 0.92,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyConfig {
    pub resolution: f64,
    pub seed: u64,
    /// Stop partitioning upward once the concatenated module summaries at a
    /// level fit this many characters.
    pub context_budget_chars: usize,
    /// Hard guard on recursion depth.
    pub max_levels: u32,
    /// Length bound handed to the summarizer prompt and applied to fallbacks.
    pub summary_budget_chars: usize,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            resolution: 1.0,
            seed: 42,
            context_budget_chars: 4000,
            max_levels: 5,
            summary_budget_chars: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Acceptance threshold for numeric verdicts; binary yes maps to 1.0.
    pub tau: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig { tau: 0.5 }
    }
}

/// Hybrid relevance scoring: `alpha * cosine + (1 - alpha) * lexical overlap`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridScoreConfig {
    pub alpha: f64,
}

impl Default for HybridScoreConfig {
    fn default() -> Self {
        HybridScoreConfig { alpha: 0.7 }
    }
}

/// Gated best-first expansion parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    /// Per-hop decay, in (0, 1).
    pub gamma: f64,
    /// Edge-kind traversal weights.
    pub edge_weights: BTreeMap<EdgeKind, f64>,
    /// Hop limit.
    pub hop_limit: u32,
    /// Minimum gain for a node to enter the frontier (seeds are exempt).
    pub gain_floor: f64,
    /// Retrieved-text budget in characters; 0 disables the budget.
    pub budget_chars: usize,
    /// Seed budget for entities (level 0).
    pub seeds_entity: usize,
    /// Seed budget for top-level modules.
    pub seeds_top_module: usize,
    /// Seed budget for intermediate module levels.
    pub seeds_intermediate: usize,
    /// MMR relevance/diversity trade-off.
    pub mmr_lambda: f64,
}

impl ExpansionConfig {
    pub fn weight(&self, kind: EdgeKind) -> f64 {
        *self.edge_weights.get(&kind).unwrap_or(&1.0)
    }

    /// Seed budget K for a hierarchy level given the top level L.
    pub fn seed_budget(&self, level: u32, top_level: u32) -> usize {
        if level == 0 {
            self.seeds_entity
        } else if level == top_level {
            self.seeds_top_module
        } else {
            self.seeds_intermediate
        }
    }
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        let edge_weights: BTreeMap<EdgeKind, f64> = [
            (EdgeKind::CausalGate, 1.2),
            (EdgeKind::Hierarchical, 1.0),
            (EdgeKind::Structural, 0.8),
        ]
        .into_iter()
        .collect();
        ExpansionConfig {
            gamma: 0.85,
            edge_weights,
            hop_limit: 4,
            gain_floor: 0.05,
            budget_chars: 8000,
            seeds_entity: 3,
            seeds_top_module: 3,
            seeds_intermediate: 0,
            mmr_lambda: 0.7,
        }
    }
}

/// Evidence-selection prompting variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    SpuriousAware,
    Standard,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bootstrap_resamples: 1000,
            bootstrap_seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub provider: ProviderConfig,
    pub chunking: ChunkingConfig,
    pub dedup: DedupConfig,
    pub hierarchy: HierarchyConfig,
    pub gates: GateConfig,
    pub scoring: HybridScoreConfig,
    pub expansion: ExpansionConfig,
    pub selection_mode: SelectionMode,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            provider: ProviderConfig::default(),
            chunking: ChunkingConfig::default(),
            dedup: DedupConfig::default(),
            hierarchy: HierarchyConfig::default(),
            gates: GateConfig::default(),
            scoring: HybridScoreConfig::default(),
            expansion: ExpansionConfig::default(),
            selection_mode: SelectionMode::SpuriousAware,
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// The resolved config as a JSON value, embedded into output artifacts.
    pub fn provenance(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
