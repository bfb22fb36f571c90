//! Graph generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tmr::kernels::Kernel;
use tmr::MatchGraph;

pub type WEdge = (usize, usize, f64);

pub fn clique(members: &[usize], lo: f64, hi: f64, p: f64, rng: &mut ChaCha8Rng, out: &mut Vec<WEdge>) {
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            if rng.random_bool(p) {
                out.push((i.min(j), i.max(j), rng.random_range(lo..hi)));
            }
        }
    }
}

pub fn dedup(mut edges: Vec<WEdge>) -> Vec<WEdge> {
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    edges.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    edges.retain(|e| e.0 != e.1);
    edges
}

/// Random graph with dense blobs plus sparse weak background edges.
pub fn planted_blobs(rng: &mut ChaCha8Rng, n: usize) -> (MatchGraph, Vec<Vec<usize>>) {
    let mut edges = Vec::new();
    let mut blobs = Vec::new();
    let mut next = 0;
    while next + 20 <= n * 3 / 4 {
        let size = rng.random_range(20..=60).min(n - next);
        let members: Vec<usize> = (next..next + size).collect();
        clique(&members, 0.5, 0.9, 0.7, rng, &mut edges);
        for w in members.windows(2) {
            edges.push((w[0], w[1], rng.random_range(0.5..0.9)));
        }
        blobs.push(members);
        next += size;
    }
    for _ in 0..n * 2 {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j {
            edges.push((i.min(j), i.max(j), rng.random_range(0.02..0.3)));
        }
    }
    let g = MatchGraph::from_similarities(n, &dedup(edges)).expect("valid fixture");
    (g, blobs)
}

pub fn weighted_edges(g: &MatchGraph) -> Vec<WEdge> {
    g.edges().iter().map(|e| (e.i, e.j, e.d)).collect()
}

/// Flood-fill components over edges accepted by `keep`, as sorted sets
/// ordered by smallest member.
pub fn flood_components(n: usize, edges: &[WEdge], keep: impl Fn(&WEdge) -> bool) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for e in edges.iter().filter(|e| keep(e)) {
        adj[e.0].push(e.1);
        adj[e.1].push(e.0);
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = vec![];
        let mut q = VecDeque::from([s]);
        seen[s] = true;
        while let Some(u) = q.pop_front() {
            comp.push(u);
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    q.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// All-pairs shortest sum of weights using only edges with weight <= cap.
pub fn floyd_warshall(n: usize, edges: &[WEdge], cap: f64) -> Vec<Vec<f64>> {
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(i, j, w) in edges.iter().filter(|e| e.2 <= cap) {
        d[i][j] = d[i][j].min(w);
        d[j][i] = d[j][i].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Smallest bottleneck over all paths, found by admitting edges in
/// increasing weight order and testing connectivity.
pub fn minimax_bottleneck(n: usize, edges: &[WEdge], a: usize, b: usize) -> Option<f64> {
    if a == b {
        return Some(0.0);
    }
    let mut ws: Vec<f64> = edges.iter().map(|e| e.2).collect();
    ws.sort_by(f64::total_cmp);
    ws.dedup();
    ws.into_iter().find(|&w| {
        flood_components(n, edges, |e| e.2 <= w)
            .iter()
            .any(|c| c.binary_search(&a).is_ok() && c.binary_search(&b).is_ok())
    })
}

/// Exhaustive simple-path search for the minimum total weight from `src`
/// to any of `targets` with edges <= cap.
pub fn best_path_length(n: usize, edges: &[WEdge], src: usize, targets: &[usize], cap: f64) -> Option<f64> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j, w) in edges.iter().filter(|e| e.2 <= cap) {
        adj[i].push((j, w));
        adj[j].push((i, w));
    }
    fn dfs(u: usize, len: f64, adj: &[Vec<(usize, f64)>], targets: &[usize], on: &mut [bool], best: &mut Option<f64>) {
        if targets.contains(&u) {
            if best.is_none_or(|b| len < b) {
                *best = Some(len);
            }
            return;
        }
        for &(w, d) in &adj[u] {
            if !on[w] {
                on[w] = true;
                dfs(w, len + d, adj, targets, on, best);
                on[w] = false;
            }
        }
    }
    let mut on = vec![false; n];
    on[src] = true;
    let mut best = None;
    dfs(src, 0.0, &adj, targets, &mut on, &mut best);
    best
}

/// True when `set` induces a connected subgraph.
pub fn induces_connected(g: &MatchGraph, set: &[usize]) -> bool {
    if set.is_empty() {
        return true;
    }
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    let inside = |v: usize| sorted.binary_search(&v).is_ok();
    let mut seen = vec![sorted[0]];
    let mut q = VecDeque::from([sorted[0]]);
    while let Some(u) = q.pop_front() {
        for (w, _) in g.neighbors(u) {
            if inside(w) && !seen.contains(&w) {
                seen.push(w);
                q.push_back(w);
            }
        }
    }
    seen.len() == sorted.len()
}

pub fn kernel(id: usize, members: Vec<usize>, exemplar: usize) -> Kernel {
    Kernel {
        id,
        members,
        exemplar: Some(exemplar),
        threshold: 0.0,
        depth: 0,
        fallback: false,
    }
}

/// A 20-member kernel on a small circle with `leaves` scattered uniformly in
/// an annulus around it; vertices closer than a cutoff are matched with a
/// similarity that decays with distance.
pub fn radial_instance(rng: &mut ChaCha8Rng, leaves: usize) -> (MatchGraph, Kernel, Vec<usize>) {
    const KERNEL: usize = 20;
    const DENSITY: f64 = 6.0;
    const CUTOFF: f64 = 0.8;
    let r_out = (leaves as f64 / (DENSITY * std::f64::consts::PI) + 1.0).sqrt();
    let mut pos = Vec::new();
    for k in 0..KERNEL {
        let a = std::f64::consts::TAU * k as f64 / KERNEL as f64;
        pos.push((0.5 * a.cos(), 0.5 * a.sin()));
    }
    for _ in 0..leaves {
        let rho = rng.random_range(1.0..r_out * r_out).sqrt();
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        pos.push((rho * a.cos(), rho * a.sin()));
    }
    let n = pos.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if i < KERNEL && j < KERNEL {
                edges.push((i, j, 0.8));
                continue;
            }
            let d = ((pos[i].0 - pos[j].0).powi(2) + (pos[i].1 - pos[j].1).powi(2)).sqrt();
            if d < CUTOFF {
                edges.push((i, j, 0.9 - 0.7 * d / CUTOFF));
            }
        }
    }
    let g = MatchGraph::from_similarities(n, &edges).expect("valid fixture");
    (g, kernel(0, (0..KERNEL).collect(), 0), (KERNEL..n).collect())
}
