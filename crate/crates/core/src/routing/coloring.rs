//! Bipartite multigraph edge coloring with the minimum number of colors.
//!
//! The graph is padded to a Δ-regular bipartite multigraph with dummy edges;
//! a regular bipartite graph always has a perfect matching, so Δ rounds of
//! maximum matching peel off one color class each.

use std::collections::VecDeque;

/// Senders on the left, receivers on the right, both indexed by rack.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DemandGraph {
    pub racks: usize,
    /// (source rack, destination rack), one entry per DP flow.
    pub edges: Vec<(usize, usize)>,
}

impl DemandGraph {
    pub fn new(racks: usize) -> Self {
        DemandGraph {
            racks,
            edges: Vec::new(),
        }
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.racks];
        for &(s, _) in &self.edges {
            d[s] += 1;
        }
        d
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.racks];
        for &(_, t) in &self.edges {
            d[t] += 1;
        }
        d
    }

    pub fn max_degree(&self) -> usize {
        self.out_degrees()
            .into_iter()
            .chain(self.in_degrees())
            .max()
            .unwrap_or(0)
    }
}

/// Maximum matching in a bipartite graph. `adj[u]` lists right vertices of
/// left vertex `u`. Returns the matched right vertex per left vertex.
pub fn hopcroft_karp(right: usize, adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    const FREE: usize = usize::MAX;
    let left = adj.len();
    let mut match_l = vec![FREE; left];
    let mut match_r = vec![FREE; right];
    let mut dist = vec![0usize; left];

    fn bfs(adj: &[Vec<usize>], match_l: &[usize], match_r: &[usize], dist: &mut [usize]) -> bool {
        let mut q = VecDeque::new();
        for u in 0..adj.len() {
            if match_l[u] == FREE {
                dist[u] = 0;
                q.push_back(u);
            } else {
                dist[u] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                let w = match_r[v];
                if w == FREE {
                    found = true;
                } else if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    q.push_back(w);
                }
            }
        }
        found
    }

    fn dfs(u: usize, adj: &[Vec<usize>], match_l: &mut [usize], match_r: &mut [usize], dist: &mut [usize]) -> bool {
        for i in 0..adj[u].len() {
            let v = adj[u][i];
            let w = match_r[v];
            if w == FREE || (dist[w] == dist[u] + 1 && dfs(w, adj, match_l, match_r, dist)) {
                match_l[u] = v;
                match_r[v] = u;
                return true;
            }
        }
        dist[u] = usize::MAX;
        false
    }

    while bfs(adj, &match_l, &match_r, &mut dist) {
        for u in 0..left {
            if match_l[u] == FREE {
                dfs(u, adj, &mut match_l, &mut match_r, &mut dist);
            }
        }
    }
    match_l.into_iter().map(|v| (v != FREE).then_some(v)).collect()
}

/// Proper edge coloring using exactly `max_degree()` colors.
pub fn edge_coloring(g: &DemandGraph) -> Vec<usize> {
    let delta = g.max_degree();
    let n = g.racks;
    if delta == 0 {
        return Vec::new();
    }
    // multiset of edge ids per (left, right) pair; dummies have no id
    let mut bucket: Vec<Vec<Vec<Option<usize>>>> = vec![vec![Vec::new(); n]; n];
    for (i, &(s, t)) in g.edges.iter().enumerate() {
        bucket[s][t].push(Some(i));
    }
    let mut out_def: Vec<usize> = g.out_degrees().iter().map(|d| delta - d).collect();
    let mut in_def: Vec<usize> = g.in_degrees().iter().map(|d| delta - d).collect();
    let (mut u, mut v) = (0, 0);
    while u < n && v < n {
        if out_def[u] == 0 {
            u += 1;
        } else if in_def[v] == 0 {
            v += 1;
        } else {
            let k = out_def[u].min(in_def[v]);
            bucket[u][v].extend(std::iter::repeat_n(None, k));
            out_def[u] -= k;
            in_def[v] -= k;
        }
    }
    let mut colors = vec![0; g.edges.len()];
    for c in 0..delta {
        let adj: Vec<Vec<usize>> = (0..n)
            .map(|s| (0..n).filter(|&t| !bucket[s][t].is_empty()).collect())
            .collect();
        let m = hopcroft_karp(n, &adj);
        for (s, t) in m.iter().enumerate() {
            let t = t.expect("regular bipartite multigraph has a perfect matching");
            if let Some(Some(e)) = bucket[s][t].pop() {
                colors[e] = c;
            }
        }
    }
    colors
}

/// Dedicated uplink per flow when Δ fits; otherwise colors are folded onto
/// the uplinks round-robin.
pub fn perfect_route(g: &DemandGraph, uplinks: usize) -> Vec<usize> {
    edge_coloring(g).into_iter().map(|c| c % uplinks).collect()
}
