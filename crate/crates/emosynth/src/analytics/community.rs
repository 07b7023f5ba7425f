//! Greedy modularity-maximizing community detection.
//!
//! Two phases repeated to a fixed point: local moves (each node may hop to
//! the neighboring community with the best strictly-positive modularity
//! gain) and aggregation (communities collapse into super-nodes, edge
//! weights summed, intra-community weight becoming a self-loop). Node order
//! is the input index order and ties go to the lowest community id, so the
//! result is deterministic for a given graph.

use serde::Serialize;

/// Outcome of community detection on an undirected graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityResult {
    /// Community id per node, renumbered to 0..k by first appearance.
    pub assignment: Vec<usize>,
    pub modularity: f64,
    /// Modularity after each local-move phase; never decreasing.
    pub phase_modularities: Vec<f64>,
}

/// Gains below this are treated as zero so float noise cannot flip a move.
const GAIN_EPSILON: f64 = 1e-12;

/// One level of the aggregation hierarchy. `self_weight[u]` is the diagonal
/// entry A(u,u); `adj` stores each off-diagonal edge from both endpoints.
struct LevelGraph {
    self_weight: Vec<f64>,
    adj: Vec<Vec<(usize, f64)>>,
    /// Total degree, i.e. 2m in modularity terms.
    two_m: f64,
}

impl LevelGraph {
    fn node_count(&self) -> usize {
        self.self_weight.len()
    }

    fn degree(&self, u: usize) -> f64 {
        self.self_weight[u] + self.adj[u].iter().map(|(_, w)| w).sum::<f64>()
    }
}

/// Detect communities of an undirected graph given as `(u, v)` edges over
/// nodes `0..n`. Duplicate edges add weight; self-loops in the input are
/// ignored. A graph with no edges is all singletons with modularity 0.
pub fn detect_communities(n: usize, edges: &[(usize, usize)]) -> CommunityResult {
    let weighted: Vec<(usize, usize, f64)> =
        edges.iter().filter(|(u, v)| u != v).map(|&(u, v)| (u, v, 1.0)).collect();
    if weighted.is_empty() {
        return CommunityResult {
            assignment: (0..n).collect(),
            modularity: 0.0,
            phase_modularities: Vec::new(),
        };
    }

    let mut graph = build_level(n, &weighted);
    // membership of the ORIGINAL nodes in the current level's node space
    let mut membership: Vec<usize> = (0..n).collect();
    let mut phase_modularities = Vec::new();

    loop {
        let (community, moved) = local_moves(&graph);
        let renumbered = renumber(&community);
        let quality = modularity(&graph, &renumbered);
        phase_modularities.push(quality);
        for slot in membership.iter_mut() {
            *slot = renumbered[*slot];
        }
        if !moved {
            break;
        }
        graph = aggregate(&graph, &renumbered);
    }

    let assignment = renumber(&membership);
    let modularity = *phase_modularities.last().unwrap();
    CommunityResult { assignment, modularity, phase_modularities }
}

fn build_level(n: usize, edges: &[(usize, usize, f64)]) -> LevelGraph {
    let self_weight = vec![0.0; n];
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(u, v, w) in edges {
        adj[u].push((v, w));
        adj[v].push((u, w));
    }
    let two_m: f64 = (0..n).map(|u| adj[u].iter().map(|(_, w)| w).sum::<f64>()).sum();
    LevelGraph { self_weight, adj, two_m }
}

/// One local-move phase. Returns the community of each node and whether any
/// node moved at all.
fn local_moves(graph: &LevelGraph) -> (Vec<usize>, bool) {
    let n = graph.node_count();
    let mut community: Vec<usize> = (0..n).collect();
    // sum of degrees per community
    let mut sum_tot: Vec<f64> = (0..n).map(|u| graph.degree(u)).collect();
    let degree: Vec<f64> = sum_tot.clone();
    let mut any_moved = false;

    loop {
        let mut moved_this_pass = false;
        for u in 0..n {
            let current = community[u];
            // weight from u to each adjacent community
            let mut weight_to: std::collections::BTreeMap<usize, f64> =
                std::collections::BTreeMap::new();
            weight_to.entry(current).or_insert(0.0);
            for &(v, w) in &graph.adj[u] {
                *weight_to.entry(community[v]).or_insert(0.0) += w;
            }

            // take u out of its community, then insert where the gain
            // (2·k_uc − sum_tot_c·k_u/m difference, constant terms dropped)
            // is largest; ascending iteration makes ties pick the lowest id
            sum_tot[current] -= degree[u];
            let gain = |c: usize, k_uc: f64| k_uc - sum_tot[c] * degree[u] / graph.two_m;
            let stay_gain = gain(current, weight_to[&current]);
            let mut best = (current, stay_gain);
            for (&c, &k_uc) in &weight_to {
                if c == current {
                    continue;
                }
                let g = gain(c, k_uc);
                if g > best.1 + GAIN_EPSILON {
                    best = (c, g);
                }
            }
            sum_tot[best.0] += degree[u];
            if best.0 != current {
                community[u] = best.0;
                moved_this_pass = true;
                any_moved = true;
            }
        }
        if !moved_this_pass {
            break;
        }
    }
    (community, any_moved)
}

/// Remap arbitrary ids to 0..k in order of first appearance.
fn renumber(ids: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    let mut next = 0usize;
    ids.iter()
        .map(|&id| {
            *map.entry(id).or_insert_with(|| {
                let assigned = next;
                next += 1;
                assigned
            })
        })
        .collect()
}

/// Modularity of a partition of the level graph:
/// Q = Σ_c (in_c / 2m − (tot_c / 2m)²), with in_c counting ordered intra
/// pairs including the diagonal.
fn modularity(graph: &LevelGraph, community: &[usize]) -> f64 {
    let k = community.iter().copied().max().map_or(0, |m| m + 1);
    let mut sum_in = vec![0.0; k];
    let mut sum_tot = vec![0.0; k];
    for u in 0..graph.node_count() {
        let c = community[u];
        sum_tot[c] += graph.degree(u);
        sum_in[c] += graph.self_weight[u];
        for &(v, w) in &graph.adj[u] {
            if community[v] == c {
                sum_in[c] += w;
            }
        }
    }
    (0..k).map(|c| sum_in[c] / graph.two_m - (sum_tot[c] / graph.two_m).powi(2)).sum()
}

/// Collapse communities into super-nodes, preserving total weight so the
/// modularity of any refinement is unchanged.
fn aggregate(graph: &LevelGraph, community: &[usize]) -> LevelGraph {
    let k = community.iter().copied().max().map_or(0, |m| m + 1);
    let mut self_weight = vec![0.0; k];
    let mut cross: std::collections::BTreeMap<(usize, usize), f64> =
        std::collections::BTreeMap::new();
    for u in 0..graph.node_count() {
        let cu = community[u];
        self_weight[cu] += graph.self_weight[u];
        for &(v, w) in &graph.adj[u] {
            let cv = community[v];
            if cu == cv {
                // each intra edge is visited from both endpoints; the
                // diagonal A(c,c) wants the full ordered sum, so half per
                // visit keeps the total weight intact
                self_weight[cu] += w;
            } else if cu < cv {
                *cross.entry((cu, cv)).or_insert(0.0) += w;
            }
        }
    }
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    for (&(a, b), &w) in &cross {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    let two_m: f64 =
        (0..k).map(|c| self_weight[c] + adj[c].iter().map(|(_, w)| w).sum::<f64>()).sum();
    LevelGraph { self_weight, adj, two_m }
}
