//! Radial agglomerative clustering of the leaves of one image cluster.
//!
//! Leaves start as singletons and the pair minimizing
//! `phi = s1*g_d + s2*g_k - s3*g_r + s4*g_c` is merged until the target
//! count is reached, where
//!
//! * `g_d`: single-linkage distance between the two clusters,
//! * `g_k`: single-linkage distance from their union to the kernel,
//! * `g_r`: difference of the two clusters' distances to the kernel,
//! * `g_c`: size of the union.
//!
//! Distances are shortest sum-of-`d` path lengths inside the subgraph
//! induced by the image cluster (kernel plus its leaves).

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::Kernel;
use crate::matchgraph::MatchGraph;

#[derive(Debug, Error, PartialEq)]
pub enum RacError {
    #[error("invalid RAC config: {0}")]
    BadConfig(String),
    #[error("leaf {0} is a kernel member")]
    LeafInKernel(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RacConfig {
    /// Leaf clusters aim for `r * m` images.
    pub r: usize,
    pub sigma: [f64; 4],
    /// Divide the distance terms by their maximum over the step's candidate
    /// pairs and the size term by the current mean cluster size.
    pub normalize_terms: bool,
}

impl Default for RacConfig {
    fn default() -> Self {
        Self {
            r: 3,
            sigma: [1.0, 1.0, 3.0, 1.0],
            normalize_terms: true,
        }
    }
}

impl RacConfig {
    fn validate(&self) -> Result<(), RacError> {
        if self.r < 1 {
            return Err(RacError::BadConfig("r must be >= 1".into()));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(RacError::BadConfig(format!("sigmas must be positive: {:?}", self.sigma)));
        }
        Ok(())
    }
}

/// `K_c = round(M / (r * m))`, at least 1 when there are leaves.
pub fn target_count(leaves: usize, r: usize, m: usize) -> usize {
    if leaves == 0 {
        return 0;
    }
    let e = (r * m).max(1) as f64;
    ((leaves as f64 / e).round() as usize).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub step: usize,
    /// Smallest image id of each merged cluster.
    pub first: usize,
    pub second: usize,
    pub phi: f64,
    pub g_d: f64,
    pub g_k: f64,
    pub g_r: f64,
    pub g_c: f64,
    /// Smallest phi among the other candidate pairs of this step.
    pub runner_up: Option<f64>,
    /// False when no graph-adjacent pair was left and any pair was allowed.
    pub adjacent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Repair {
    pub moved: Vec<usize>,
    /// Smallest image id of the donating and receiving clusters.
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RacOutcome {
    /// Leaf clusters, each sorted, ordered by smallest member.
    pub clusters: Vec<Vec<usize>>,
    /// Leaves with no path to the kernel inside the image cluster.
    pub quarantined: Vec<usize>,
    pub target: usize,
    pub steps: Vec<MergeStep>,
    pub repairs: Vec<Repair>,
    /// Clusters that stayed disconnected from the kernel after repair.
    pub unrepaired: usize,
}

impl RacOutcome {
    /// Merge log as CSV.
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("step,first,second,phi,g_d,g_k,g_r,g_c,adjacent\n");
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.step, s.first, s.second, s.phi, s.g_d, s.g_k, s.g_r, s.g_c, s.adjacent
            );
        }
        out
    }
}

/// Cluster subgraph with local indices: kernel members first, then leaves.
struct Local {
    global: Vec<usize>,
    adj: Vec<Vec<(usize, f64)>>,
    kernel_len: usize,
}

impl Local {
    fn new(g: &MatchGraph, kernel: &[usize], leaves: &[usize]) -> Self {
        let global: Vec<usize> = kernel.iter().chain(leaves).copied().collect();
        let index: HashMap<usize, usize> = global.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let adj = global
            .iter()
            .map(|&v| {
                g.neighbors(v)
                    .filter_map(|(u, e)| index.get(&u).map(|&k| (k, e.d)))
                    .collect()
            })
            .collect();
        Self {
            global,
            adj,
            kernel_len: kernel.len(),
        }
    }

    fn dijkstra(&self, sources: &[usize]) -> Vec<f64> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;
        #[derive(PartialEq)]
        struct Key(f64);
        impl Eq for Key {}
        impl PartialOrd for Key {
            fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Key {
            fn cmp(&self, o: &Self) -> std::cmp::Ordering {
                self.0.total_cmp(&o.0)
            }
        }
        let mut dist = vec![f64::INFINITY; self.global.len()];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            dist[s] = 0.0;
            heap.push(Reverse((Key(0.0), s)));
        }
        while let Some(Reverse((Key(du), u))) = heap.pop() {
            if du > dist[u] {
                continue;
            }
            for &(w, d) in &self.adj[u] {
                let nd = du + d;
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(Reverse((Key(nd), w)));
                }
            }
        }
        dist
    }
}

struct Pair {
    a: usize,
    b: usize,
    g: [f64; 4],
}

/// Splits `leaves` of the image cluster around `kernel` into leaf clusters.
pub fn rac_split(
    g: &MatchGraph,
    kernel: &Kernel,
    leaves: &[usize],
    m: usize,
    cfg: &RacConfig,
) -> Result<RacOutcome, RacError> {
    cfg.validate()?;
    if let Some(&v) = leaves.iter().find(|&&v| kernel.contains(v)) {
        return Err(RacError::LeafInKernel(v));
    }
    let mut leaves = leaves.to_vec();
    leaves.sort_unstable();
    leaves.dedup();
    let local = Local::new(g, &kernel.members, &leaves);
    let kl = local.kernel_len;

    let kernel_idx: Vec<usize> = (0..kl).collect();
    let to_kernel = local.dijkstra(&kernel_idx);
    let (active, quarantined): (Vec<usize>, Vec<usize>) =
        (kl..local.global.len()).partition(|&x| to_kernel[x].is_finite());
    let quarantined: Vec<usize> = quarantined.iter().map(|&x| local.global[x]).collect();
    if !quarantined.is_empty() {
        warn!(
            "kernel {}: {} leaves have no path to the kernel inside the cluster; quarantined",
            kernel.id,
            quarantined.len()
        );
    }
    let target = target_count(active.len(), cfg.r, m);
    let mut outcome = RacOutcome {
        quarantined,
        target,
        ..Default::default()
    };
    if active.is_empty() {
        return Ok(outcome);
    }

    // slot k <-> active[k]
    let n = active.len();
    let slot_of: HashMap<usize, usize> = active.iter().enumerate().map(|(k, &x)| (x, k)).collect();
    let leaf_dist: Vec<Vec<f64>> = active
        .iter()
        .map(|&x| {
            let d = local.dijkstra(&[x]);
            active.iter().map(|&y| d[y]).collect()
        })
        .collect();
    let mut link = leaf_dist.clone();
    let mut members: Vec<Vec<usize>> = (0..n).map(|k| vec![k]).collect();
    let mut dk: Vec<f64> = active.iter().map(|&x| to_kernel[x]).collect();
    let mut alive: BTreeSet<usize> = (0..n).collect();
    let mut neighbors: Vec<BTreeSet<usize>> = active
        .iter()
        .map(|&x| {
            local.adj[x]
                .iter()
                .filter_map(|(w, _)| slot_of.get(w).copied())
                .collect()
        })
        .collect();
    let rep = |members: &[usize]| members.iter().map(|&k| local.global[active[k]]).min().unwrap();

    let mut step = 0;
    while alive.len() > target {
        let mut pairs: Vec<Pair> = Vec::new();
        let make = |a: usize, b: usize, members: &[Vec<usize>]| Pair {
            a,
            b,
            g: [
                link[a][b],
                dk[a].min(dk[b]),
                (dk[a] - dk[b]).abs(),
                (members[a].len() + members[b].len()) as f64,
            ],
        };
        for &a in &alive {
            for &b in neighbors[a].range(a + 1..) {
                pairs.push(make(a, b, &members));
            }
        }
        let adjacent = !pairs.is_empty();
        if !adjacent {
            debug!("kernel {}: no adjacent leaf clusters left; merging globally", kernel.id);
            let ids: Vec<usize> = alive.iter().copied().collect();
            for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    pairs.push(make(a, b, &members));
                }
            }
        }
        let mut scale = [1.0; 4];
        if cfg.normalize_terms {
            for (t, sc) in scale.iter_mut().enumerate() {
                let max = pairs.iter().map(|p| p.g[t]).fold(0.0, f64::max);
                if max > 0.0 {
                    *sc = 1.0 / max;
                }
            }
            scale[3] = alive.len() as f64 / n as f64;
        }
        let phi = |p: &Pair| {
            let [s1, s2, s3, s4] = cfg.sigma;
            s1 * p.g[0] * scale[0] + s2 * p.g[1] * scale[1] - s3 * p.g[2] * scale[2]
                + s4 * p.g[3] * scale[3]
        };
        let mut scored: Vec<(f64, &Pair)> = pairs.iter().map(|p| (phi(p), p)).collect();
        scored.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1.a, x.1.b).cmp(&(y.1.a, y.1.b))));
        let (best_phi, best) = scored[0];
        let (a, b) = (best.a, best.b);
        step += 1;
        outcome.steps.push(MergeStep {
            step,
            first: rep(&members[a]),
            second: rep(&members[b]),
            phi: best_phi,
            g_d: best.g[0],
            g_k: best.g[1],
            g_r: best.g[2],
            g_c: best.g[3],
            runner_up: scored.get(1).map(|s| s.0),
            adjacent,
        });

        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        dk[a] = dk[a].min(dk[b]);
        for &x in &alive {
            let v = link[a][x].min(link[b][x]);
            link[a][x] = v;
            link[x][a] = v;
        }
        let nb = std::mem::take(&mut neighbors[b]);
        for x in nb {
            neighbors[x].remove(&b);
            if x != a {
                neighbors[x].insert(a);
                neighbors[a].insert(x);
            }
        }
        neighbors[a].remove(&b);
        alive.remove(&b);
    }

    let mut clusters: Vec<Vec<usize>> = alive
        .iter()
        .map(|&c| members[c].iter().map(|&k| active[k]).collect())
        .collect();
    repair(&local, &leaf_dist, &slot_of, &mut clusters, &mut outcome);

    let mut out: Vec<Vec<usize>> = clusters
        .into_iter()
        .filter(|c| !c.is_empty())
        .map(|c| {
            let mut v: Vec<usize> = c.iter().map(|&x| local.global[x]).collect();
            v.sort_unstable();
            v
        })
        .collect();
    out.sort();
    outcome.clusters = out;
    Ok(outcome)
}

/// Splits a cluster (local indices) into the part reachable from the kernel
/// through the cluster itself and the remaining connected pieces.
fn anchored_split(local: &Local, cluster: &[usize]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let n = local.global.len();
    let mut allowed = vec![false; n];
    for k in 0..local.kernel_len {
        allowed[k] = true;
    }
    for &x in cluster {
        allowed[x] = true;
    }
    let flood = |starts: &[usize], seen: &mut Vec<bool>| -> Vec<usize> {
        let mut queue: VecDeque<usize> = starts.iter().copied().collect();
        let mut reached = Vec::new();
        for &s in starts {
            seen[s] = true;
        }
        while let Some(u) = queue.pop_front() {
            reached.push(u);
            for &(w, _) in &local.adj[u] {
                if allowed[w] && !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        reached
    };
    let mut seen = vec![false; n];
    let kernel: Vec<usize> = (0..local.kernel_len).collect();
    let mut anchored: Vec<usize> = flood(&kernel, &mut seen)
        .into_iter()
        .filter(|&x| x >= local.kernel_len)
        .collect();
    anchored.sort_unstable();
    let mut stranded = Vec::new();
    let mut rest: Vec<usize> = cluster.iter().copied().filter(|&x| !seen[x]).collect();
    rest.sort_unstable();
    for x in rest {
        if !seen[x] {
            let mut piece = flood(&[x], &mut seen);
            piece.sort_unstable();
            stranded.push(piece);
        }
    }
    (anchored, stranded)
}

/// Shortest route from the cluster to the kernel avoiding `blocked` leaves,
/// as the leaves on it that lie outside the cluster.
fn corridor(local: &Local, cluster: &[usize], blocked: &[bool]) -> Option<Vec<usize>> {
    let n = local.global.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    for &x in cluster {
        dist[x] = 0.0;
    }
    loop {
        let u = (0..n)
            .filter(|&v| !done[v] && dist[v].is_finite())
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)))?;
        if u < local.kernel_len {
            let mut out = Vec::new();
            let mut v = prev[u];
            while v != usize::MAX && dist[v] > 0.0 {
                out.push(v);
                v = prev[v];
            }
            return Some(out);
        }
        done[u] = true;
        for &(w, d) in &local.adj[u] {
            if !done[w] && !blocked[w] && dist[u] + d < dist[w] {
                dist[w] = dist[u] + d;
                prev[w] = u;
            }
        }
    }
}

/// Reconnects clusters that cannot reach the kernel through their own
/// members. A cluster with no anchored part claims the leaves of its
/// shortest route to the kernel; other stranded pieces move to the nearest
/// cluster whose anchored part they touch.
fn repair(
    local: &Local,
    leaf_dist: &[Vec<f64>],
    slot_of: &HashMap<usize, usize>,
    clusters: &mut [Vec<usize>],
    outcome: &mut RacOutcome,
) {
    let rep = |c: &[usize]| c.iter().map(|&x| local.global[x]).min().unwrap_or(usize::MAX);
    let mut budget = 4 * local.global.len() + 16;
    let mut pinned = vec![false; local.global.len()];
    loop {
        let splits: Vec<_> = clusters.iter().map(|c| anchored_split(local, c)).collect();
        if splits.iter().all(|(_, s)| s.is_empty()) {
            outcome.unrepaired = 0;
            return;
        }
        budget = budget.saturating_sub(1);
        let floating = splits
            .iter()
            .position(|(anchored, stranded)| anchored.is_empty() && !stranded.is_empty());
        if let Some(ci) = floating.filter(|_| budget > 0) {
            let path = corridor(local, &clusters[ci], &pinned).filter(|p| !p.is_empty());
            if let Some(path) = path {
                for &x in &path {
                    pinned[x] = true;
                }
                for (yi, c) in clusters.iter_mut().enumerate() {
                    if yi != ci && c.iter().any(|x| path.contains(x)) {
                        outcome.repairs.push(Repair {
                            moved: path.iter().filter(|x| c.contains(x)).map(|&x| local.global[x]).collect(),
                            from: rep(c),
                            to: usize::MAX,
                        });
                        c.retain(|x| !path.contains(x));
                    }
                }
                let to = rep(&clusters[ci]);
                for r in outcome.repairs.iter_mut().filter(|r| r.to == usize::MAX) {
                    r.to = to;
                }
                clusters[ci].extend(path);
                continue;
            }
        }
        let mut moved_any = false;
        'search: for (ci, (_, stranded)) in splits.iter().enumerate() {
            for piece in stranded {
                let mut best: Option<(f64, usize)> = None;
                for (yi, (anchored, _)) in splits.iter().enumerate() {
                    if yi == ci || anchored.is_empty() {
                        continue;
                    }
                    let touches = piece
                        .iter()
                        .any(|&x| local.adj[x].iter().any(|(w, _)| anchored.binary_search(w).is_ok()));
                    if !touches {
                        continue;
                    }
                    let dist = piece
                        .iter()
                        .flat_map(|&x| anchored.iter().map(move |&y| (x, y)))
                        .map(|(x, y)| leaf_dist[slot_of[&x]][slot_of[&y]])
                        .fold(f64::INFINITY, f64::min);
                    let better = match best {
                        None => true,
                        Some((bd, byi)) => dist < bd || (dist == bd && rep(&clusters[yi]) < rep(&clusters[byi])),
                    };
                    if better {
                        best = Some((dist, yi));
                    }
                }
                if let Some((_, yi)) = best {
                    outcome.repairs.push(Repair {
                        moved: piece.iter().map(|&x| local.global[x]).collect(),
                        from: rep(&clusters[ci]),
                        to: rep(&clusters[yi]),
                    });
                    clusters[ci].retain(|x| piece.binary_search(x).is_err());
                    clusters[yi].extend(piece.iter().copied());
                    moved_any = true;
                    break 'search;
                }
            }
        }
        if !moved_any || budget == 0 {
            outcome.unrepaired = splits.iter().filter(|(_, s)| !s.is_empty()).count();
            warn!("{} leaf clusters remain disconnected from their kernel", outcome.unrepaired);
            return;
        }
    }
}
