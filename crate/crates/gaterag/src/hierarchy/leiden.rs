//! Leiden community detection: local moving, refinement, and aggregation,
//! with seeded randomness so builds are reproducible. A final post-pass
//! splits any disconnected community into its connected components, which
//! both enforces the connectivity guarantee and strictly raises modularity
//! on graphs where it fires.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-12;
const MAX_SWEEPS: usize = 16;
const MAX_OUTER: usize = 32;

/// Undirected weighted graph over nodes `0..n`. Parallel edges are summed;
/// self-loops are allowed (they arise from aggregation).
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    n: usize,
    adj: Vec<Vec<(usize, f64)>>,
    /// Sum of all node degrees (2m). Self-loops contribute twice.
    total_degree: f64,
}

impl WeightedGraph {
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut maps: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
        for &(u, v, w) in edges {
            assert!(u < n && v < n, "edge endpoint out of range");
            assert!(w > 0.0, "edge weights must be positive");
            *maps[u].entry(v).or_insert(0.0) += w;
            if u != v {
                *maps[v].entry(u).or_insert(0.0) += w;
            }
        }
        let adj: Vec<Vec<(usize, f64)>> = maps
            .into_iter()
            .map(|m| m.into_iter().collect())
            .collect();
        let mut total_degree = 0.0;
        for (u, list) in adj.iter().enumerate() {
            for &(v, w) in list {
                total_degree += if u == v { 2.0 * w } else { w };
            }
        }
        WeightedGraph {
            n,
            adj,
            total_degree,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    fn degree(&self, u: usize) -> f64 {
        self.adj[u]
            .iter()
            .map(|&(v, w)| if v == u { 2.0 * w } else { w })
            .sum()
    }
}

/// One level's community assignment with its modularity.
#[derive(Debug, Clone)]
pub struct Partition {
    /// node index -> community index (contiguous from 0).
    pub assignment: Vec<usize>,
    pub community_count: usize,
    pub modularity: f64,
}

impl Partition {
    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.community_count];
        for (node, &c) in self.assignment.iter().enumerate() {
            out[c].push(node);
        }
        out
    }
}

/// Modularity of an assignment at the given resolution. Zero by convention on
/// edgeless graphs.
pub fn modularity(graph: &WeightedGraph, assignment: &[usize], resolution: f64) -> f64 {
    let two_m = graph.total_degree;
    if two_m == 0.0 {
        return 0.0;
    }
    let communities = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut internal = vec![0.0f64; communities]; // 2 * intra-community weight
    let mut degree = vec![0.0f64; communities];
    for u in 0..graph.n {
        let cu = assignment[u];
        degree[cu] += graph.degree(u);
        for &(v, w) in &graph.adj[u] {
            if assignment[v] == cu {
                internal[cu] += if u == v { 2.0 * w } else { w };
            }
        }
    }
    let mut q = 0.0;
    for c in 0..communities {
        q += internal[c] / two_m - resolution * (degree[c] / two_m) * (degree[c] / two_m);
    }
    q
}

/// Runs Leiden at a fixed resolution. Singleton nodes become singleton
/// communities; every returned community is internally connected.
pub fn leiden_partition(graph: &WeightedGraph, resolution: f64, seed: u64) -> Partition {
    let n = graph.node_count();
    if n == 0 {
        return Partition {
            assignment: Vec::new(),
            community_count: 0,
            modularity: 0.0,
        };
    }
    if graph.total_degree == 0.0 {
        return Partition {
            assignment: (0..n).collect(),
            community_count: n,
            modularity: 0.0,
        };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // membership: original node -> node of the current working graph.
    let mut membership: Vec<usize> = (0..n).collect();
    let mut work = graph.clone();
    let mut comm: Vec<usize> = (0..work.n).collect();

    for _ in 0..MAX_OUTER {
        let improved = local_move(&work, &mut comm, resolution, &mut rng);
        let community_count = renumber(&mut comm);
        if community_count == work.n && !improved {
            break;
        }
        let refined = refine(&work, &comm, resolution, &mut rng);
        let (aggregated, refined_comm_of_agg) = aggregate(&work, &refined, &comm);
        if aggregated.n == work.n {
            break;
        }
        for m in membership.iter_mut() {
            *m = refined.assignment[*m];
        }
        comm = refined_comm_of_agg;
        work = aggregated;
    }

    let mut assignment: Vec<usize> = membership.iter().map(|&m| comm[m]).collect();
    renumber(&mut assignment);
    let assignment = split_disconnected(graph, &assignment);
    let community_count = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let q = modularity(graph, &assignment, resolution);
    Partition {
        assignment,
        community_count,
        modularity: q,
    }
}

/// Greedy modularity sweep: each node moves to the neighboring community
/// with the highest positive gain, until a full pass makes no move.
fn local_move(
    graph: &WeightedGraph,
    comm: &mut [usize],
    resolution: f64,
    rng: &mut ChaCha8Rng,
) -> bool {
    let two_m = graph.total_degree;
    let degrees: Vec<f64> = (0..graph.n).map(|u| graph.degree(u)).collect();
    let mut comm_degree = vec![0.0f64; graph.n + 1];
    for u in 0..graph.n {
        comm_degree[comm[u]] += degrees[u];
    }
    let mut order: Vec<usize> = (0..graph.n).collect();
    let mut any_improvement = false;

    for _ in 0..MAX_SWEEPS {
        order.shuffle(rng);
        let mut moved = false;
        for &u in &order {
            let current = comm[u];
            comm_degree[current] -= degrees[u];

            // Weights from u to each adjacent community (self-loops ignored).
            let mut touched: Vec<(usize, f64)> = Vec::new();
            for &(v, w) in &graph.adj[u] {
                if v == u {
                    continue;
                }
                let c = comm[v];
                match touched.iter_mut().find(|(tc, _)| *tc == c) {
                    Some((_, tw)) => *tw += w,
                    None => touched.push((c, w)),
                }
            }
            touched.sort_by_key(|&(c, _)| c);

            let to_current = touched
                .iter()
                .find(|&&(c, _)| c == current)
                .map_or(0.0, |&(_, w)| w);
            let base = to_current / two_m
                - resolution * comm_degree[current] * degrees[u] / (two_m * two_m);

            let mut best_comm = current;
            let mut best_gain = 0.0f64;
            for &(c, w) in &touched {
                if c == current {
                    continue;
                }
                let gain = w / two_m - resolution * comm_degree[c] * degrees[u] / (two_m * two_m)
                    - base;
                if gain > best_gain + EPS {
                    best_gain = gain;
                    best_comm = c;
                }
            }

            comm_degree[best_comm] += degrees[u];
            if best_comm != current {
                comm[u] = best_comm;
                moved = true;
                any_improvement = true;
            }
        }
        if !moved {
            break;
        }
    }
    any_improvement
}

/// Refinement: inside each community, grow connected sub-communities by
/// merging singleton nodes into adjacent sub-communities with positive gain.
/// Sub-communities stay connected because a node only joins via an edge.
fn refine(
    graph: &WeightedGraph,
    comm: &[usize],
    resolution: f64,
    rng: &mut ChaCha8Rng,
) -> Partition {
    let two_m = graph.total_degree;
    let degrees: Vec<f64> = (0..graph.n).map(|u| graph.degree(u)).collect();
    let mut refined: Vec<usize> = (0..graph.n).collect();
    let mut sub_size = vec![1usize; graph.n];
    let mut sub_degree = degrees.clone();

    let mut by_comm: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (u, &c) in comm.iter().enumerate() {
        by_comm.entry(c).or_default().push(u);
    }

    for nodes in by_comm.values() {
        if nodes.len() <= 1 {
            continue;
        }
        let mut order = nodes.clone();
        order.shuffle(rng);
        for &u in &order {
            if sub_size[refined[u]] > 1 {
                continue; // only singletons may move
            }
            let mut touched: Vec<(usize, f64)> = Vec::new();
            for &(v, w) in &graph.adj[u] {
                if v == u || comm[v] != comm[u] {
                    continue;
                }
                let s = refined[v];
                if s == refined[u] {
                    continue;
                }
                match touched.iter_mut().find(|(ts, _)| *ts == s) {
                    Some((_, tw)) => *tw += w,
                    None => touched.push((s, w)),
                }
            }
            touched.sort_by_key(|&(s, _)| s);

            let mut best_sub = refined[u];
            let mut best_gain = 0.0f64;
            for &(s, w) in &touched {
                let gain = w / two_m - resolution * sub_degree[s] * degrees[u] / (two_m * two_m);
                if gain > best_gain + EPS {
                    best_gain = gain;
                    best_sub = s;
                }
            }
            if best_sub != refined[u] {
                sub_degree[refined[u]] -= degrees[u];
                sub_size[refined[u]] -= 1;
                refined[u] = best_sub;
                sub_degree[best_sub] += degrees[u];
                sub_size[best_sub] += 1;
            }
        }
    }

    let mut assignment = refined;
    let community_count = renumber(&mut assignment);
    Partition {
        assignment,
        community_count,
        modularity: 0.0,
    }
}

/// Collapses each refined sub-community into one node. The aggregated node
/// starts in the community its members held after local moving.
fn aggregate(
    graph: &WeightedGraph,
    refined: &Partition,
    comm: &[usize],
) -> (WeightedGraph, Vec<usize>) {
    let k = refined.community_count;
    let mut edges: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for u in 0..graph.n {
        for &(v, w) in &graph.adj[u] {
            if v < u {
                continue; // count undirected edges once (v == u kept)
            }
            let (a, b) = (refined.assignment[u], refined.assignment[v]);
            let key = (a.min(b), a.max(b));
            *edges.entry(key).or_insert(0.0) += w;
        }
    }
    let edge_list: Vec<(usize, usize, f64)> =
        edges.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    let aggregated = WeightedGraph::new(k, &edge_list);

    let mut comm_of_agg = vec![0usize; k];
    for u in 0..graph.n {
        comm_of_agg[refined.assignment[u]] = comm[u];
    }
    (aggregated, comm_of_agg)
}

/// Renumbers communities to contiguous indices ordered by first appearance.
fn renumber(assignment: &mut [usize]) -> usize {
    let mut map: std::collections::BTreeMap<usize, usize> = Default::default();
    let mut next = 0usize;
    for a in assignment.iter_mut() {
        let id = *map.entry(*a).or_insert_with(|| {
            let id = next;
            next += 1;
            id
        });
        *a = id;
    }
    next
}

/// Splits any disconnected community into connected components.
fn split_disconnected(graph: &WeightedGraph, assignment: &[usize]) -> Vec<usize> {
    let mut out = vec![usize::MAX; graph.n];
    let mut next = 0usize;
    let mut stack = Vec::new();
    for start in 0..graph.n {
        if out[start] != usize::MAX {
            continue;
        }
        let comp = next;
        next += 1;
        out[start] = comp;
        stack.push(start);
        while let Some(u) = stack.pop() {
            for &(v, _) in &graph.adj[u] {
                if out[v] == usize::MAX && assignment[v] == assignment[start] {
                    out[v] = comp;
                    stack.push(v);
                }
            }
        }
    }
    out
}

/// True when every community is internally connected.
pub fn communities_connected(graph: &WeightedGraph, assignment: &[usize]) -> bool {
    let split = split_disconnected(graph, assignment);
    let count = |a: &[usize]| a.iter().copied().max().map_or(0, |m| m + 1);
    count(&split) == count(assignment)
}
