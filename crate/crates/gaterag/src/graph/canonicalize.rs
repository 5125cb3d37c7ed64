//! Two-stage entity deduplication: fuzzy string canonicalization followed by
//! embedding-similarity merging, with transitive closure via union-find.

use std::collections::BTreeMap;

use super::{cosine, EntityNode, GraphError, NodeId};

/// Outcome of canonicalization: the merged node list plus a total map from
/// every input id to the id of the node that now represents it.
#[derive(Debug, Clone)]
pub struct CanonicalizationResult {
    pub nodes: Vec<EntityNode>,
    pub merge_map: BTreeMap<NodeId, NodeId>,
}

/// Normalized edit similarity on lowercased, punctuation-stripped names:
/// `1 - indel_distance / (len_a + len_b)` = `2 * LCS / (len_a + len_b)`,
/// in [0, 1]. This is edit distance with substitutions costed as
/// delete+insert, so "j biden" vs "joe biden" scores 0.875 rather than the
/// 0.78 a substitution-cost-1 variant would give. Two empty normalized names
/// count as identical.
pub fn normalized_name_similarity(a: &str, b: &str) -> f64 {
    let na = normalize_name(a);
    let nb = normalize_name(b);
    let (la, lb) = (na.chars().count(), nb.chars().count());
    if la + lb == 0 {
        return 1.0;
    }
    2.0 * lcs_len(&na, &nb) as f64 / (la + lb) as f64
}

/// Lowercases and strips everything that is not alphanumeric or whitespace,
/// collapsing whitespace runs to single spaces.
pub(crate) fn normalize_name(name: &str) -> String {
    let lowered: String = name
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn lcs_len(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ca in &a {
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller index wins so representative choice is order-independent.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Merges duplicate entities in two stages: pairs whose normalized name
/// similarity reaches `fuzzy_threshold`, then pairs whose embedding cosine
/// reaches `embed_threshold`. Merging is the transitive closure of both pair
/// relations. The merged node keeps the representative's name, id and
/// embedding (representative = longest name, ties by name then id) and pools
/// descriptions, aliases and source chunks — which makes a second pass a
/// fix-point.
pub fn canonicalize_entities(
    raw_nodes: &[EntityNode],
    fuzzy_threshold: f64,
    embed_threshold: f64,
) -> Result<CanonicalizationResult, GraphError> {
    if let Some(first) = raw_nodes.first() {
        let dim = first.embedding.len();
        for node in raw_nodes {
            if node.embedding.len() != dim {
                return Err(GraphError::DimensionMismatch {
                    expected: dim,
                    got: node.embedding.len(),
                });
            }
        }
    }

    let n = raw_nodes.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if normalized_name_similarity(&raw_nodes[i].name, &raw_nodes[j].name)
                >= fuzzy_threshold
            {
                uf.union(i, j);
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if cosine(&raw_nodes[i].embedding, &raw_nodes[j].embedding) >= embed_threshold {
                uf.union(i, j);
            }
        }
    }

    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = uf.find(i);
        clusters.entry(root).or_default().push(i);
    }

    let mut nodes = Vec::with_capacity(clusters.len());
    let mut merge_map = BTreeMap::new();
    for members in clusters.values() {
        let rep = *members
            .iter()
            .max_by(|&&a, &&b| {
                let (na, nb) = (&raw_nodes[a], &raw_nodes[b]);
                na.name
                    .chars()
                    .count()
                    .cmp(&nb.name.chars().count())
                    .then(nb.name.cmp(&na.name))
                    .then(nb.id.cmp(&na.id))
            })
            .expect("cluster is non-empty");
        let rep_node = &raw_nodes[rep];

        let mut merged = rep_node.clone();
        for &m in members {
            let src = &raw_nodes[m];
            merge_map.insert(src.id.clone(), rep_node.id.clone());
            if m == rep {
                continue;
            }
            if src.name != merged.name {
                merged.aliases.insert(src.name.clone());
            }
            merged.aliases.extend(src.aliases.iter().cloned());
            merged.source_chunks.extend(src.source_chunks.iter().cloned());
            if !src.description.is_empty() && !merged.description.contains(&src.description) {
                if merged.description.is_empty() {
                    merged.description = src.description.clone();
                } else {
                    merged.description.push_str(" | ");
                    merged.description.push_str(&src.description);
                }
            }
        }
        merged.aliases.remove(&merged.name);
        nodes.push(merged);
    }
    nodes.sort_by(|a, b| a.id.cmp(&b.id));

    Ok(CanonicalizationResult { nodes, merge_map })
}
