//! Kernel finding: dense, size-bounded image groups found by adding
//! similarity edges back layer by layer, strongest first.
//!
//! A component larger than `alpha * m` is searched again on its own, with
//! layers refreshed from its weight range; its leftover vertices are then
//! closed and take no part in later layers.

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matchgraph::{components_within, MatchGraph};
use crate::unionfind::UnionFind;

/// Recursion depth after which an oversize component is split by dropping
/// its weakest edges instead of being searched again.
pub const MAX_RECURSION_DEPTH: usize = 10;

/// Ratio between consecutive layer offsets from the lower bound.
const LAYER_RATIO: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("layer bounds must satisfy a < b (a = {a}, b = {b})")]
    BadRange { a: f64, b: f64 },
    #[error("invalid kernel config: {0}")]
    BadConfig(String),
}

/// How the lower layer bound `a` is derived from the edge weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FloorMode {
    /// `a = min(s) + epsilon`.
    #[default]
    Relative,
    /// `a = epsilon`.
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Minimum kernel size.
    pub m: usize,
    /// Inflation factor; kernels hold at most `alpha * m` images.
    pub alpha: f64,
    pub layers: usize,
    pub epsilon: f64,
    pub floor: FloorMode,
}

impl KernelConfig {
    pub fn validate(&self) -> Result<(), KernelError> {
        if self.m < 2 {
            return Err(KernelError::BadConfig(format!("m = {} < 2", self.m)));
        }
        if !(self.alpha >= 1.0) {
            return Err(KernelError::BadConfig(format!("alpha = {} < 1", self.alpha)));
        }
        if self.layers < 1 {
            return Err(KernelError::BadConfig("layers must be >= 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(KernelError::BadConfig(format!("epsilon = {} < 0", self.epsilon)));
        }
        Ok(())
    }

    pub fn max_size(&self) -> f64 {
        self.alpha * self.m as f64
    }

    fn accepts(&self, size: usize) -> bool {
        size >= self.m && size as f64 <= self.max_size()
    }
}

/// `m = min(70, 0.15 * Z)`, rounded and clamped to at least 2.
pub fn auto_kernel_size(num_images: usize) -> usize {
    let m = (0.15 * num_images as f64).min(70.0).round() as usize;
    m.max(2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub id: usize,
    /// Sorted member image ids.
    pub members: Vec<usize>,
    /// Starting image; set by exemplar selection.
    pub exemplar: Option<usize>,
    /// Similarity threshold active when the kernel was accepted.
    pub threshold: f64,
    /// Recursion depth at acceptance (0 for the top-level search).
    pub depth: usize,
    /// True when produced by the weakest-edge split fallback.
    pub fallback: bool,
}

impl Kernel {
    pub fn contains(&self, v: usize) -> bool {
        self.members.binary_search(&v).is_ok()
    }
}

/// `theta_i = a + (b - a) / 1.5^(i - 1)` for `i = 1..=k`.
pub fn layer_thresholds(a: f64, b: f64, k: usize) -> Result<Vec<f64>, KernelError> {
    if !(a < b) {
        return Err(KernelError::BadRange { a, b });
    }
    Ok((0..k).map(|i| a + (b - a) / LAYER_RATIO.powi(i as i32)).collect())
}

struct Search<'a> {
    g: &'a MatchGraph,
    cfg: KernelConfig,
    taken: Vec<bool>,
    /// Vertices of components already resolved by a recursive search.
    closed: Vec<bool>,
    kernels: Vec<Kernel>,
}

impl Search<'_> {
    fn accept(&mut self, members: Vec<usize>, threshold: f64, depth: usize, fallback: bool) {
        for &v in &members {
            self.taken[v] = true;
        }
        debug!(
            "kernel {} accepted: {} images at threshold {threshold:.4} (depth {depth})",
            self.kernels.len(),
            members.len()
        );
        self.kernels.push(Kernel {
            id: self.kernels.len(),
            members,
            exemplar: None,
            threshold,
            depth,
            fallback,
        });
    }

    fn active_mask(&self, vertices: &[usize]) -> Vec<bool> {
        let mut mask = vec![false; self.g.num_images()];
        for &v in vertices {
            mask[v] = !self.taken[v] && !self.closed[v];
        }
        mask
    }

    /// Layered search over `vertices`, using only edges with `s >= floor`.
    fn run(&mut self, vertices: &[usize], floor: f64, depth: usize) {
        let mask = self.active_mask(vertices);
        let Some((lo, hi)) = self
            .g
            .edges()
            .iter()
            .filter(|e| mask[e.i] && mask[e.j] && e.s >= floor)
            .fold(None, |acc: Option<(f64, f64)>, e| match acc {
                None => Some((e.s, e.s)),
                Some((lo, hi)) => Some((lo.min(e.s), hi.max(e.s))),
            })
        else {
            return;
        };
        // the weak-edge offset only applies to the whole graph; a recursive
        // search spans its component's full weight range
        let a = match (depth, self.cfg.floor) {
            (0, FloorMode::Relative) => lo + self.cfg.epsilon,
            (0, FloorMode::Absolute) => self.cfg.epsilon,
            _ => lo,
        };
        let thresholds = layer_thresholds(a, hi, self.cfg.layers).unwrap_or_else(|_| vec![hi]);

        for theta in thresholds {
            let mask = self.active_mask(vertices);
            let cut = theta.max(floor);
            let comps = components_within(self.g, &mask, |e| e.s >= cut);
            for comp in comps {
                if comp.len() < self.cfg.m {
                    continue;
                }
                if self.cfg.accepts(comp.len()) {
                    self.accept(comp, cut, depth, false);
                } else {
                    if depth + 1 > MAX_RECURSION_DEPTH {
                        self.split_weakest(&comp, cut, depth);
                    } else {
                        self.run(&comp, cut, depth + 1);
                    }
                    for &v in &comp {
                        self.closed[v] = true;
                    }
                }
            }
        }
    }

    /// Keeps the strongest edges of `comp` (edges with `s >= floor`) while no
    /// component exceeds `alpha * m`; everything from the first violating edge
    /// downward is dropped.
    fn split_weakest(&mut self, comp: &[usize], floor: f64, depth: usize) {
        let mask = self.active_mask(comp);
        let mut edges: Vec<_> = self
            .g
            .edges()
            .iter()
            .filter(|e| mask[e.i] && mask[e.j] && e.s >= floor)
            .collect();
        edges.sort_by(|x, y| y.s.total_cmp(&x.s).then((x.i, x.j).cmp(&(y.i, y.j))));
        let max = self.cfg.max_size();
        let mut uf = UnionFind::new(self.g.num_images());
        let mut last = f64::INFINITY;
        for e in edges {
            let merged = if uf.find(e.i) == uf.find(e.j) {
                0
            } else {
                uf.set_size(e.i) + uf.set_size(e.j)
            };
            if merged as f64 > max {
                break;
            }
            uf.union(e.i, e.j);
            last = e.s;
        }
        warn!(
            "component of {} images stayed above alpha*m through recursion depth {MAX_RECURSION_DEPTH}; split by dropping weakest edges",
            comp.len()
        );
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot = std::collections::HashMap::new();
        for &v in comp.iter().filter(|&&v| mask[v]) {
            let r = uf.find(v);
            let k = *slot.entry(r).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[k].push(v);
        }
        for grp in groups {
            if self.cfg.accepts(grp.len()) {
                self.accept(grp, last, depth, true);
            }
        }
    }
}

/// Finds disjoint kernels whose sizes lie in `[m, alpha * m]`.
pub fn find_kernels(g: &MatchGraph, cfg: &KernelConfig) -> Result<Vec<Kernel>, KernelError> {
    cfg.validate()?;
    let mut search = Search {
        g,
        cfg: *cfg,
        taken: vec![false; g.num_images()],
        closed: vec![false; g.num_images()],
        kernels: Vec::new(),
    };
    let all: Vec<usize> = (0..g.num_images()).collect();
    search.run(&all, f64::NEG_INFINITY, 0);
    Ok(search.kernels)
}

/// Mean similarity over edges with both endpoints in `members` (sorted).
pub fn mean_internal_similarity(g: &MatchGraph, members: &[usize]) -> Option<f64> {
    let inside = |v: usize| members.binary_search(&v).is_ok();
    let (sum, count) = g
        .edges()
        .iter()
        .filter(|e| inside(e.i) && inside(e.j))
        .fold((0.0, 0usize), |(s, c), e| (s + e.s, c + 1));
    (count > 0).then(|| sum / count as f64)
}
