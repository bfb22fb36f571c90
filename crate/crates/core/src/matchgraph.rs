//! Similarity and difference views of an image matching graph.
//!
//! Vertices are images; an edge carries the verified match count `n_ij`, the
//! Jaccard similarity `s_ij = n_ij / (n_i + n_j - n_ij)` and the difference
//! weight `d_ij = 1 - s_ij`. Both views share one edge list, so they always
//! have the same vertices and edges.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::unionfind::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageStats {
    pub id: usize,
    /// Feature points on this image that have a correspondence on any other image.
    pub n_features: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchEdge {
    pub i: usize,
    pub j: usize,
    /// Match count after clamping to `min(n_i, n_j)`.
    pub matches: u64,
    /// Match count as given on input.
    pub raw_matches: u64,
    pub s: f64,
    pub d: f64,
}

impl MatchEdge {
    pub fn other(&self, v: usize) -> usize {
        if v == self.i {
            self.j
        } else {
            self.i
        }
    }
}

/// How the denominator of the similarity is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMode {
    /// `n_i + n_j - n_ij` (Jaccard).
    #[default]
    Union,
    /// `max(n_i, n_j)`.
    Max,
}

pub fn similarity(n_i: u64, n_j: u64, n_ij: u64, mode: SimilarityMode) -> Option<f64> {
    let denom = match mode {
        SimilarityMode::Union => (n_i + n_j).checked_sub(n_ij)?,
        SimilarityMode::Max => n_i.max(n_j),
    };
    if denom == 0 {
        None
    } else {
        Some(n_ij as f64 / denom as f64)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("no images")]
    Empty,
    #[error("image ids must be unique and contiguous from 0; offending id {0}")]
    BadImageId(usize),
    #[error("edge ({i}, {j}) references unknown image id")]
    UnknownImage { i: usize, j: usize },
    #[error("self-loop on image {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },
    #[error("edge ({i}, {j}) has a zero similarity denominator (n_i = {n_i}, n_j = {n_j}, n_ij = {n_ij})")]
    ZeroDenominator {
        i: usize,
        j: usize,
        n_i: u64,
        n_j: u64,
        n_ij: u64,
    },
    #[error("edge ({i}, {j}) similarity {s} outside [0, 1]")]
    BadWeight { i: usize, j: usize, s: f64 },
}

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BuildWarning {
    /// `n_ij` exceeded `min(n_i, n_j)` and was clamped.
    Clamped { i: usize, j: usize, raw: u64, clamped: u64 },
    /// Edge had zero similarity after clamping and was dropped.
    DroppedZero { i: usize, j: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchGraph {
    stats: Vec<ImageStats>,
    edges: Vec<MatchEdge>,
    adjacency: Vec<Vec<(usize, usize)>>,
    warnings: Vec<BuildWarning>,
}

/// Builds the graph with the Jaccard similarity.
pub fn build_graph(
    stats: &[ImageStats],
    matches: &[(usize, usize, u64)],
) -> Result<MatchGraph, GraphError> {
    build_graph_with(stats, matches, SimilarityMode::Union)
}

pub fn build_graph_with(
    stats: &[ImageStats],
    matches: &[(usize, usize, u64)],
    mode: SimilarityMode,
) -> Result<MatchGraph, GraphError> {
    let stats = canonical_stats(stats)?;
    let n = stats.len();
    let mut seen = HashSet::new();
    let mut edges = Vec::with_capacity(matches.len());
    let mut warnings = Vec::new();
    for &(a, b, raw) in matches {
        if a >= n || b >= n {
            return Err(GraphError::UnknownImage { i: a, j: b });
        }
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        let (i, j) = (a.min(b), a.max(b));
        if !seen.insert((i, j)) {
            return Err(GraphError::DuplicateEdge { i, j });
        }
        let (n_i, n_j) = (stats[i].n_features, stats[j].n_features);
        let cap = n_i.min(n_j);
        let clamped = raw.min(cap);
        if n_i + n_j - clamped == 0 {
            return Err(GraphError::ZeroDenominator {
                i,
                j,
                n_i,
                n_j,
                n_ij: raw,
            });
        }
        if clamped != raw {
            warn!("edge ({i}, {j}): n_ij = {raw} exceeds min(n_i, n_j) = {cap}; clamped");
            warnings.push(BuildWarning::Clamped {
                i,
                j,
                raw,
                clamped,
            });
        }
        let s = similarity(n_i, n_j, clamped, mode).unwrap_or(0.0);
        if clamped == 0 || s <= 0.0 {
            warn!("edge ({i}, {j}) has zero similarity; dropped");
            warnings.push(BuildWarning::DroppedZero { i, j });
            continue;
        }
        edges.push(MatchEdge {
            i,
            j,
            matches: clamped,
            raw_matches: raw,
            s,
            d: 1.0 - s,
        });
    }
    Ok(MatchGraph::assemble(stats, edges, warnings))
}

fn canonical_stats(stats: &[ImageStats]) -> Result<Vec<ImageStats>, GraphError> {
    if stats.is_empty() {
        return Err(GraphError::Empty);
    }
    let mut sorted = stats.to_vec();
    sorted.sort_by_key(|s| s.id);
    for (k, st) in sorted.iter().enumerate() {
        if st.id != k {
            return Err(GraphError::BadImageId(st.id));
        }
    }
    Ok(sorted)
}

impl MatchGraph {
    /// Builds a graph directly from similarity weights, for generated fixtures
    /// that have no underlying match counts. Such edges carry `matches = 0` and
    /// the images carry `n_features = 0`.
    pub fn from_similarities(n: usize, weighted: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let stats = (0..n).map(|id| ImageStats { id, n_features: 0 }).collect();
        let mut seen = HashSet::new();
        let mut edges = Vec::with_capacity(weighted.len());
        for &(a, b, s) in weighted {
            if a >= n || b >= n {
                return Err(GraphError::UnknownImage { i: a, j: b });
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            let (i, j) = (a.min(b), a.max(b));
            if !seen.insert((i, j)) {
                return Err(GraphError::DuplicateEdge { i, j });
            }
            if !(0.0..=1.0).contains(&s) {
                return Err(GraphError::BadWeight { i, j, s });
            }
            if s == 0.0 {
                continue;
            }
            edges.push(MatchEdge {
                i,
                j,
                matches: 0,
                raw_matches: 0,
                s,
                d: 1.0 - s,
            });
        }
        Ok(Self::assemble(stats, edges, Vec::new()))
    }

    fn assemble(stats: Vec<ImageStats>, mut edges: Vec<MatchEdge>, warnings: Vec<BuildWarning>) -> Self {
        edges.sort_by_key(|e| (e.i, e.j));
        let mut adjacency = vec![Vec::new(); stats.len()];
        for (k, e) in edges.iter().enumerate() {
            adjacency[e.i].push((e.j, k));
            adjacency[e.j].push((e.i, k));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Self {
            stats,
            edges,
            adjacency,
            warnings,
        }
    }

    pub fn num_images(&self) -> usize {
        self.stats.len()
    }

    pub fn stats(&self) -> &[ImageStats] {
        &self.stats
    }

    pub fn edges(&self) -> &[MatchEdge] {
        &self.edges
    }

    pub fn warnings(&self) -> &[BuildWarning] {
        &self.warnings
    }

    /// Neighbors of `v` in ascending id order, with the connecting edge.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, &MatchEdge)> + '_ {
        self.adjacency[v].iter().map(move |&(u, k)| (u, &self.edges[k]))
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<&MatchEdge> {
        let list = &self.adjacency[a];
        list.binary_search_by_key(&b, |&(u, _)| u)
            .ok()
            .map(|pos| &self.edges[list[pos].1])
    }

    /// Images with no incident edge; they can never be clustered.
    pub fn isolated(&self) -> Vec<usize> {
        (0..self.num_images()).filter(|&v| self.degree(v) == 0).collect()
    }

    pub fn mean_similarity(&self) -> Option<f64> {
        if self.edges.is_empty() {
            None
        } else {
            Some(self.edges.iter().map(|e| e.s).sum::<f64>() / self.edges.len() as f64)
        }
    }

    /// `(min d, max d)` over all edges.
    pub fn difference_range(&self) -> Option<(f64, f64)> {
        self.edges.iter().fold(None, |acc, e| match acc {
            None => Some((e.d, e.d)),
            Some((lo, hi)) => Some((lo.min(e.d), hi.max(e.d))),
        })
    }

    /// Parses the line-oriented match-graph text format.
    pub fn parse(text: &str) -> Result<Self, GraphFileError> {
        let (stats, matches) = parse_match_file(text)?;
        Ok(build_graph(&stats, &matches)?)
    }

    /// Serializes the raw inputs back into the text format.
    pub fn to_text(&self) -> String {
        write_match_file(
            &self.stats,
            &self
                .edges
                .iter()
                .map(|e| (e.i, e.j, e.raw_matches))
                .collect::<Vec<_>>(),
        )
    }

    /// DOT rendering of the similarity view with `s_ij` labels.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph S {\n");
        for v in 0..self.num_images() {
            let _ = writeln!(out, "  {v};");
        }
        for e in &self.edges {
            let _ = writeln!(out, "  {} -- {} [label=\"{:.2}\"];", e.i, e.j, e.s);
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphFileError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

type MatchTriples = Vec<(usize, usize, u64)>;

pub fn parse_match_file(text: &str) -> Result<(Vec<ImageStats>, MatchTriples), ParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let err = |line: usize, message: String| ParseError { line, message };
    let last_line = text.lines().count().max(1);

    let header = |lines: &mut dyn Iterator<Item = (usize, &str)>, key: &str| -> Result<usize, ParseError> {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(last_line, format!("expected `{key} <count>`")))?;
        let mut toks = l.split_whitespace();
        if toks.next() != Some(key) {
            return Err(err(ln, format!("expected `{key} <count>`, found `{l}`")));
        }
        let count = toks
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| err(ln, format!("bad count in `{l}`")))?;
        if toks.next().is_some() {
            return Err(err(ln, format!("trailing tokens in `{l}`")));
        }
        Ok(count)
    };

    let n = header(&mut lines, "images")?;
    let mut stats = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(last_line, "missing image line".into()))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let parsed = match toks.as_slice() {
            [id, nf] => id.parse::<usize>().ok().zip(nf.parse::<u64>().ok()),
            _ => None,
        };
        let (id, n_features) = parsed.ok_or_else(|| err(ln, format!("expected `<id> <n_i>`, found `{l}`")))?;
        stats.push(ImageStats { id, n_features });
    }
    let e = header(&mut lines, "matches")?;
    let mut matches = Vec::with_capacity(e);
    for _ in 0..e {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(last_line, "missing match line".into()))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let parsed = match toks.as_slice() {
            [i, j, c] => match (i.parse::<usize>(), j.parse::<usize>(), c.parse::<u64>()) {
                (Ok(i), Ok(j), Ok(c)) => Some((i, j, c)),
                _ => None,
            },
            _ => None,
        };
        matches.push(parsed.ok_or_else(|| err(ln, format!("expected `<i> <j> <n_ij>`, found `{l}`")))?);
    }
    if let Some((ln, l)) = lines.next() {
        return Err(err(ln, format!("unexpected content `{l}`")));
    }
    Ok((stats, matches))
}

pub fn write_match_file(stats: &[ImageStats], matches: &[(usize, usize, u64)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "images {}", stats.len());
    for s in stats {
        let _ = writeln!(out, "{} {}", s.id, s.n_features);
    }
    let _ = writeln!(out, "matches {}", matches.len());
    for (i, j, c) in matches {
        let _ = writeln!(out, "{i} {j} {c}");
    }
    out
}

/// Connected components over all vertices, keeping only edges accepted by
/// `keep`. Components are sorted internally and ordered by smallest member.
pub fn connected_components<F>(g: &MatchGraph, keep: F) -> Vec<Vec<usize>>
where
    F: Fn(&MatchEdge) -> bool,
{
    let all = vec![true; g.num_images()];
    components_within(g, &all, keep)
}

/// Connected components of the subgraph induced by `active` vertices.
pub fn components_within<F>(g: &MatchGraph, active: &[bool], keep: F) -> Vec<Vec<usize>>
where
    F: Fn(&MatchEdge) -> bool,
{
    let n = g.num_images();
    let mut uf = UnionFind::new(n);
    for e in g.edges() {
        if active[e.i] && active[e.j] && keep(e) {
            uf.union(e.i, e.j);
        }
    }
    let mut slot = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for v in (0..n).filter(|&v| active[v]) {
        let r = uf.find(v);
        if slot[r] == usize::MAX {
            slot[r] = comps.len();
            comps.push(Vec::new());
        }
        comps[slot[r]].push(v);
    }
    comps
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionPath {
    /// Vertices from the source to the reached target, inclusive.
    pub vertices: Vec<usize>,
    /// Sum of `d` along the path.
    pub length: f64,
    /// Largest `d` on the path; 0 for a path without edges.
    pub bottleneck: f64,
}

impl ReconstructionPath {
    pub fn target(&self) -> usize {
        *self.vertices.last().expect("path has at least one vertex")
    }

    pub fn num_edges(&self) -> usize {
        self.vertices.len() - 1
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    hops: usize,
    v: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.hops.cmp(&self.hops))
            .then_with(|| other.v.cmp(&self.v))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Multi-source Dijkstra on the difference weights using only edges with
/// `d <= edge_cap`. Returns the distance and hop count labels; unreachable
/// vertices get `f64::INFINITY` and `usize::MAX`.
pub fn distances_from(g: &MatchGraph, sources: &[usize], edge_cap: f64) -> (Vec<f64>, Vec<usize>) {
    let n = g.num_images();
    let mut dist = vec![f64::INFINITY; n];
    let mut hops = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        dist[s] = 0.0;
        hops[s] = 0;
        heap.push(HeapItem { dist: 0.0, hops: 0, v: s });
    }
    while let Some(HeapItem { dist: du, hops: hu, v: u }) = heap.pop() {
        if du > dist[u] || (du == dist[u] && hu > hops[u]) {
            continue;
        }
        for (w, e) in g.neighbors(u) {
            if e.d > edge_cap {
                continue;
            }
            let nd = du + e.d;
            let nh = hu + 1;
            if nd < dist[w] || (nd == dist[w] && nh < hops[w]) {
                dist[w] = nd;
                hops[w] = nh;
                heap.push(HeapItem { dist: nd, hops: nh, v: w });
            }
        }
    }
    (dist, hops)
}

const PATH_TIE_TOL: f64 = 1e-12;

/// Minimum sum-of-`d` path from `src` to the nearest vertex of `targets`,
/// restricted to edges with `d <= edge_cap`. Among (numerically) equal-length
/// paths the lexicographically smallest vertex sequence is returned.
pub fn shortest_path(
    g: &MatchGraph,
    src: usize,
    targets: &[usize],
    edge_cap: f64,
) -> Option<ReconstructionPath> {
    let n = g.num_images();
    let mut is_target = vec![false; n];
    for &t in targets {
        is_target[t] = true;
    }
    if is_target[src] {
        return Some(ReconstructionPath {
            vertices: vec![src],
            length: 0.0,
            bottleneck: 0.0,
        });
    }
    let (dist, hops) = distances_from(g, targets, edge_cap);
    if !dist[src].is_finite() {
        return None;
    }
    let mut vertices = vec![src];
    let (mut length, mut bottleneck) = (0.0_f64, 0.0_f64);
    let mut u = src;
    while !is_target[u] {
        let tol = PATH_TIE_TOL * (1.0 + dist[u]);
        // hop labels strictly decrease along the walk, so it terminates
        let (next, e) = g
            .neighbors(u)
            .find(|(w, e)| {
                e.d <= edge_cap && hops[*w] < hops[u] && (dist[*w] + e.d - dist[u]).abs() <= tol
            })
            .expect("Dijkstra predecessor always qualifies");
        length += e.d;
        bottleneck = bottleneck.max(e.d);
        vertices.push(next);
        u = next;
    }
    Some(ReconstructionPath {
        vertices,
        length,
        bottleneck,
    })
}
