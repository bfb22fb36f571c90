//! End-to-end partitioning of a matching graph into a reconstruction tree.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::exemplar::{select_exemplar, ExemplarChoice, ExemplarError};
use crate::kernels::{find_kernels, mean_internal_similarity, Kernel, KernelError};
use crate::matchgraph::MatchGraph;
use crate::mspcluster::{cluster_leaves, ClusterAssignment, MspError};
use crate::rac::{rac_split, RacError, RacOutcome};
use crate::schedule::{plan_schedule, ScheduleError, Workers};
use crate::tree::{build_tree, LeafCluster, TmrTree, TreeError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no images")]
    NoImages,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Exemplar(#[from] ExemplarError),
    #[error(transparent)]
    Msp(#[from] MspError),
    #[error(transparent)]
    Rac(#[from] RacError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub m: usize,
    /// Kernels with exemplars set.
    pub kernels: Vec<Kernel>,
    pub exemplars: Vec<ExemplarChoice>,
    pub assignments: Vec<ClusterAssignment>,
    /// One outcome per kernel.
    pub rac: Vec<RacOutcome>,
    pub tree: TmrTree,
}

/// Runs `f` on a rayon pool capped at `workers` threads.
pub fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    let pool = b.build().map_err(|e| PipelineError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

pub fn partition(g: &MatchGraph, cfg: &RunConfig) -> Result<Partition, PipelineError> {
    if g.num_images() == 0 {
        return Err(PipelineError::NoImages);
    }
    if cfg.workers == Some(0) {
        return Err(ScheduleError::NoWorkers.into());
    }
    with_pool(cfg.workers, || partition_inner(g, cfg))?
}

fn partition_inner(g: &MatchGraph, cfg: &RunConfig) -> Result<Partition, PipelineError> {
    let kcfg = cfg.kernel_config(g.num_images());
    let mut kernels = find_kernels(g, &kcfg)?;
    info!("{} kernels with m = {}", kernels.len(), kcfg.m);
    if kernels.is_empty() {
        warn!("no kernel found; every image is left unclustered");
    }

    let eparams = cfg.exemplar_params();
    let exemplars: Vec<ExemplarChoice> = kernels
        .par_iter()
        .map(|k| select_exemplar(g, k, &eparams))
        .collect::<Result<_, _>>()?;
    for (k, e) in kernels.iter_mut().zip(&exemplars) {
        k.exemplar = Some(e.exemplar);
    }

    let assignments = cluster_leaves(g, &kernels, &cfg.msp_config())?;
    let mut leaves: Vec<Vec<usize>> = vec![Vec::new(); kernels.len()];
    let mut unclustered = Vec::new();
    for a in &assignments {
        match a.kernel() {
            Some(k) => leaves[k].push(a.leaf()),
            None => unclustered.push(a.leaf()),
        }
    }

    let rcfg = cfg.rac_config();
    let rac: Vec<RacOutcome> = kernels
        .par_iter()
        .zip(&leaves)
        .map(|(k, l)| rac_split(g, k, l, kcfg.m, &rcfg))
        .collect::<Result<_, _>>()?;

    let mut leaf_clusters = Vec::new();
    for (k, out) in kernels.iter().zip(&rac) {
        for c in &out.clusters {
            leaf_clusters.push(LeafCluster {
                id: leaf_clusters.len(),
                kernel: k.id,
                members: c.clone(),
                quarantined: false,
            });
        }
        if !out.quarantined.is_empty() {
            leaf_clusters.push(LeafCluster {
                id: leaf_clusters.len(),
                kernel: k.id,
                members: out.quarantined.clone(),
                quarantined: true,
            });
        }
    }
    let tree = build_tree(g.num_images(), kernels.clone(), leaf_clusters, unclustered)?;
    Ok(Partition {
        m: kcfg.m,
        kernels,
        exemplars,
        assignments,
        rac,
        tree,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub id: usize,
    pub size: usize,
    pub exemplar: Option<usize>,
    pub second_image: Option<usize>,
    pub threshold: f64,
    pub depth: usize,
    pub fallback: bool,
    pub mean_similarity: Option<f64>,
    pub leaves: usize,
    pub leaf_clusters: usize,
    pub quarantined: usize,
    pub rac_target: usize,
    pub repairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafClusterReport {
    pub id: usize,
    pub kernel: usize,
    pub size: usize,
    pub quarantined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub workers: Workers,
    pub makespan: f64,
    pub serial: f64,
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub num_images: usize,
    pub num_edges: usize,
    pub graph_warnings: usize,
    pub m: usize,
    pub alpha: f64,
    pub kernels: Vec<KernelReport>,
    pub leaf_clusters: Vec<LeafClusterReport>,
    pub unclustered: Vec<usize>,
    /// Leaves first reached at each MSP layer (index 0 is layer 1).
    pub msp_layer_histogram: Vec<usize>,
    pub schedule: ScheduleSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<ExemplarChoice>>,
}

impl Partition {
    pub fn report(&self, g: &MatchGraph, cfg: &RunConfig, with_scores: bool) -> Result<PartitionReport, PipelineError> {
        let mut hist = vec![0; cfg.l];
        for a in &self.assignments {
            if let ClusterAssignment::Clustered { layer, .. } = a {
                hist[layer - 1] += 1;
            }
        }
        let workers = cfg.workers.map_or(Workers::Unlimited, Workers::Limited);
        let plan = plan_schedule(&self.tree, workers, cfg.merge_cost)?;
        let kernels = self
            .kernels
            .iter()
            .zip(&self.exemplars)
            .zip(&self.rac)
            .map(|((k, e), r)| KernelReport {
                id: k.id,
                size: k.members.len(),
                exemplar: k.exemplar,
                second_image: e.second_image,
                threshold: k.threshold,
                depth: k.depth,
                fallback: k.fallback,
                mean_similarity: mean_internal_similarity(g, &k.members),
                leaves: r.clusters.iter().map(Vec::len).sum::<usize>() + r.quarantined.len(),
                leaf_clusters: r.clusters.len(),
                quarantined: r.quarantined.len(),
                rac_target: r.target,
                repairs: r.repairs.len(),
            })
            .collect();
        Ok(PartitionReport {
            num_images: g.num_images(),
            num_edges: g.edges().len(),
            graph_warnings: g.warnings().len(),
            m: self.m,
            alpha: cfg.alpha,
            kernels,
            leaf_clusters: self
                .tree
                .leaf_clusters
                .iter()
                .map(|c| LeafClusterReport {
                    id: c.id,
                    kernel: c.kernel,
                    size: c.members.len(),
                    quarantined: c.quarantined,
                })
                .collect(),
            unclustered: self.tree.unclustered.clone(),
            msp_layer_histogram: hist,
            schedule: ScheduleSummary {
                workers,
                makespan: plan.makespan,
                serial: plan.serial,
                speedup: plan.speedup,
            },
            scores: with_scores.then(|| self.exemplars.clone()),
        })
    }

    /// Merge logs of all kernels as one CSV with a leading kernel column.
    pub fn dendrogram_csv(&self) -> String {
        let mut out = String::from("kernel,");
        let mut header_done = false;
        for (k, r) in self.kernels.iter().zip(&self.rac) {
            let csv = r.steps_csv();
            let mut lines = csv.lines();
            let header = lines.next().unwrap_or_default();
            if !header_done {
                out.push_str(header);
                out.push('\n');
                header_done = true;
            }
            for l in lines {
                out.push_str(&format!("{},{l}\n", k.id));
            }
        }
        if !header_done {
            out.push_str(RacOutcome::default().steps_csv().lines().next().unwrap_or_default());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::KernelSize;

    fn two_blobs() -> MatchGraph {
        let mut e = Vec::new();
        for off in [0, 30] {
            for a in 0..20 {
                for b in a + 1..20 {
                    e.push((off + a, off + b, 0.6));
                }
            }
            for l in 20..30 {
                e.push((off + l - 20, off + l, 0.3));
            }
        }
        e.push((19, 49, 0.05));
        MatchGraph::from_similarities(60, &e).unwrap()
    }

    #[test]
    fn two_blob_fixture() {
        let g = two_blobs();
        let cfg = RunConfig {
            m: KernelSize::Fixed(15),
            ..RunConfig::default()
        };
        let p = partition(&g, &cfg).unwrap();
        assert_eq!(p.kernels.len(), 2);
        assert_eq!(p.tree.leaf_clusters.len(), 2);
        assert!(p.tree.unclustered.is_empty());
        let rep = p.report(&g, &cfg, false).unwrap();
        assert_eq!(rep.kernels.len(), 2);
        assert!(rep.scores.is_none());
        assert!(p.dendrogram_csv().starts_with("kernel,step,"));
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let g = two_blobs();
        let mut cfg = RunConfig {
            m: KernelSize::Fixed(15),
            workers: Some(1),
            ..RunConfig::default()
        };
        let a = partition(&g, &cfg).unwrap();
        cfg.workers = Some(4);
        let b = partition(&g, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_graph_errors() {
        let g = MatchGraph::from_similarities(0, &[]);
        if let Ok(g) = g {
            assert!(matches!(partition(&g, &RunConfig::default()), Err(PipelineError::NoImages)));
        }
    }
}
