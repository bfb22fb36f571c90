//! Exemplar (starting image) selection inside a kernel.
//!
//! Affinity propagation proposes cluster centers among the kernel images;
//! the centers and their kernel neighbors are scored with
//! `delta(v) = h_deg + beta1 * h_sim + beta2 * h_ndeg` and the best one wins.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::Kernel;
use crate::matchgraph::MatchGraph;

/// Affinity assigned to kernel image pairs without a match edge.
pub const NON_ADJACENT_AFFINITY: f64 = -1.0;

#[derive(Debug, Error, PartialEq)]
pub enum ExemplarError {
    #[error("kernel {0} has no members")]
    EmptyKernel(usize),
    #[error("empty candidate set")]
    NoCandidates,
    #[error("candidate {0} is not a kernel member")]
    ForeignCandidate(usize),
    #[error("similarity matrix must be square and non-empty")]
    BadMatrix,
    #[error("invalid affinity propagation parameters: {0}")]
    BadParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preference {
    /// Median of the off-diagonal affinities.
    Median,
    Value(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApParams {
    pub damping: f64,
    pub max_iterations: usize,
    /// Iterations the exemplar set must stay unchanged to count as converged.
    pub convergence_window: usize,
    pub preference: Preference,
}

impl Default for ApParams {
    fn default() -> Self {
        Self {
            damping: 0.9,
            max_iterations: 500,
            convergence_window: 50,
            preference: Preference::Median,
        }
    }
}

impl ApParams {
    fn validate(&self) -> Result<(), ExemplarError> {
        if !(0.5..1.0).contains(&self.damping) {
            return Err(ExemplarError::BadParams(format!("damping {} not in [0.5, 1)", self.damping)));
        }
        if self.convergence_window < 1 || self.max_iterations < self.convergence_window {
            return Err(ExemplarError::BadParams(
                "need max_iterations >= convergence_window >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    /// Sorted exemplar indices.
    pub exemplars: Vec<usize>,
    /// Exemplar index for each point.
    pub assignment: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Affinity propagation on a dense similarity matrix. The diagonal of
/// `similarity` is ignored and replaced by the preference.
pub fn ap_cluster(similarity: &[Vec<f64>], params: &ApParams) -> Result<ApResult, ExemplarError> {
    params.validate()?;
    let n = similarity.len();
    if n == 0 || similarity.iter().any(|row| row.len() != n) {
        return Err(ExemplarError::BadMatrix);
    }
    if n == 1 {
        return Ok(ApResult {
            exemplars: vec![0],
            assignment: vec![0],
            converged: true,
            iterations: 0,
        });
    }
    let pref = match params.preference {
        Preference::Median => median(
            (0..n)
                .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
                .map(|(i, k)| similarity[i][k])
                .collect(),
        ),
        Preference::Value(p) => p,
    };
    let s = |i: usize, k: usize| if i == k { pref } else { similarity[i][k] };

    let lambda = params.damping;
    let mut r = vec![vec![0.0; n]; n];
    let mut a = vec![vec![0.0; n]; n];
    let mut last: Vec<usize> = Vec::new();
    let mut stable = 0usize;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=params.max_iterations {
        iterations = it;
        for i in 0..n {
            let (mut best, mut best_k, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a[i][k] + s(i, k);
                if v > best {
                    second = best;
                    best = v;
                    best_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == best_k { second } else { best };
                r[i][k] = lambda * r[i][k] + (1.0 - lambda) * (s(i, k) - competitor);
            }
        }
        for k in 0..n {
            let positive: f64 = (0..n).filter(|&i| i != k).map(|i| r[i][k].max(0.0)).sum();
            for i in 0..n {
                let fresh = if i == k {
                    positive
                } else {
                    (r[k][k] + positive - r[i][k].max(0.0)).min(0.0)
                };
                a[i][k] = lambda * a[i][k] + (1.0 - lambda) * fresh;
            }
        }
        let current: Vec<usize> = (0..n).filter(|&k| a[k][k] + r[k][k] > 0.0).collect();
        if current == last && !current.is_empty() {
            stable += 1;
            if stable >= params.convergence_window {
                converged = true;
                break;
            }
        } else {
            stable = 0;
            last = current;
        }
    }

    let mut exemplars: Vec<usize> = (0..n).filter(|&k| a[k][k] + r[k][k] > 0.0).collect();
    if exemplars.is_empty() {
        let best = (0..n)
            .max_by(|&x, &y| {
                (a[x][x] + r[x][x])
                    .total_cmp(&(a[y][y] + r[y][y]))
                    .then(y.cmp(&x))
            })
            .expect("n > 0");
        exemplars.push(best);
    }
    if !converged {
        warn!("affinity propagation did not converge in {} iterations", params.max_iterations);
    }
    let assignment = (0..n)
        .map(|i| {
            if exemplars.binary_search(&i).is_ok() {
                i
            } else {
                *exemplars
                    .iter()
                    .max_by(|&&x, &&y| s(i, x).total_cmp(&s(i, y)).then(y.cmp(&x)))
                    .expect("non-empty")
            }
        })
        .collect();
    Ok(ApResult {
        exemplars,
        assignment,
        converged,
        iterations,
    })
}

/// Graph neighborhood used for the degree terms of the score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreScope {
    #[default]
    KernelSubgraph,
    FullGraph,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExemplarScore {
    pub vertex: usize,
    pub h_deg: usize,
    pub h_sim: f64,
    pub h_ndeg: f64,
    pub delta: f64,
}

struct Scorer<'a> {
    g: &'a MatchGraph,
    members: &'a [usize],
    scope: ScoreScope,
}

impl Scorer<'_> {
    fn in_scope(&self, v: usize) -> bool {
        match self.scope {
            ScoreScope::KernelSubgraph => self.members.binary_search(&v).is_ok(),
            ScoreScope::FullGraph => true,
        }
    }

    fn degree(&self, v: usize) -> usize {
        self.g.neighbors(v).filter(|(u, _)| self.in_scope(*u)).count()
    }

    fn score(&self, v: usize, beta1: f64, beta2: f64) -> ExemplarScore {
        let nbrs: Vec<_> = self.g.neighbors(v).filter(|(u, _)| self.in_scope(*u)).collect();
        let h_deg = nbrs.len();
        let (h_sim, h_ndeg) = if h_deg == 0 {
            (0.0, 0.0)
        } else {
            let sim = nbrs.iter().map(|(_, e)| e.s).sum::<f64>() / h_deg as f64;
            let ndeg = nbrs.iter().map(|(u, _)| self.degree(*u) as f64).sum::<f64>() / h_deg as f64;
            (sim, ndeg)
        };
        ExemplarScore {
            vertex: v,
            h_deg,
            h_sim,
            h_ndeg,
            delta: h_deg as f64 + beta1 * h_sim + beta2 * h_ndeg,
        }
    }
}

/// Scores `candidates` and returns the table plus the argmax (smallest id on ties).
pub fn score_candidates(
    g: &MatchGraph,
    kernel: &Kernel,
    candidates: &[usize],
    beta1: f64,
    beta2: f64,
    scope: ScoreScope,
) -> Result<(Vec<ExemplarScore>, usize), ExemplarError> {
    if candidates.is_empty() {
        return Err(ExemplarError::NoCandidates);
    }
    if let Some(&c) = candidates.iter().find(|&&c| !kernel.contains(c)) {
        return Err(ExemplarError::ForeignCandidate(c));
    }
    let scorer = Scorer {
        g,
        members: &kernel.members,
        scope,
    };
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let scores: Vec<ExemplarScore> = sorted.iter().map(|&v| scorer.score(v, beta1, beta2)).collect();
    let best = scores
        .iter()
        .max_by(|x, y| x.delta.total_cmp(&y.delta).then(y.vertex.cmp(&x.vertex)))
        .expect("non-empty")
        .vertex;
    Ok((scores, best))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExemplarParams {
    pub ap: ApParams,
    pub beta1: f64,
    pub beta2: f64,
    pub scope: ScoreScope,
}

impl Default for ExemplarParams {
    fn default() -> Self {
        Self {
            ap: ApParams::default(),
            beta1: 100.0,
            beta2: 1.0,
            scope: ScoreScope::KernelSubgraph,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExemplarChoice {
    pub kernel: usize,
    pub exemplar: usize,
    /// Kernel neighbor of the exemplar with the largest similarity.
    pub second_image: Option<usize>,
    pub ap_exemplars: Vec<usize>,
    pub ap_converged: bool,
    pub scores: Vec<ExemplarScore>,
}

/// Pairwise affinities among kernel members: `s_ij` for matched pairs and
/// [`NON_ADJACENT_AFFINITY`] otherwise.
pub fn kernel_affinities(g: &MatchGraph, members: &[usize]) -> Vec<Vec<f64>> {
    members
        .iter()
        .map(|&a| {
            members
                .iter()
                .map(|&b| {
                    if a == b {
                        0.0
                    } else {
                        g.edge_between(a, b).map_or(NON_ADJACENT_AFFINITY, |e| e.s)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn select_exemplar(
    g: &MatchGraph,
    kernel: &Kernel,
    params: &ExemplarParams,
) -> Result<ExemplarChoice, ExemplarError> {
    if kernel.members.is_empty() {
        return Err(ExemplarError::EmptyKernel(kernel.id));
    }
    let ap = ap_cluster(&kernel_affinities(g, &kernel.members), &params.ap)?;
    let centers: Vec<usize> = ap.exemplars.iter().map(|&k| kernel.members[k]).collect();
    let mut candidates = centers.clone();
    for &c in &centers {
        candidates.extend(g.neighbors(c).map(|(u, _)| u).filter(|&u| kernel.contains(u)));
    }
    let (scores, exemplar) =
        score_candidates(g, kernel, &candidates, params.beta1, params.beta2, params.scope)?;
    let second_image = g
        .neighbors(exemplar)
        .filter(|(u, _)| kernel.contains(*u))
        .max_by(|(u, x), (w, y)| x.s.total_cmp(&y.s).then(w.cmp(u)))
        .map(|(u, _)| u);
    Ok(ExemplarChoice {
        kernel: kernel.id,
        exemplar,
        second_image,
        ap_exemplars: centers,
        ap_converged: ap.converged,
        scores,
    })
}
