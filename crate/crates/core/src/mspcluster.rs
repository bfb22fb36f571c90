//! Multi-layer shortest path clustering of leaves onto kernels.
//!
//! The difference graph is opened layer by layer with increasing edge caps
//! `phi_t`. A leaf is assigned at the first layer in which any kernel
//! exemplar becomes reachable, to the reachable kernel with the smallest
//! sum-of-`d` path. This minimizes the largest step along the reconstruction
//! path up to the layer quantization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::Kernel;
use crate::matchgraph::{distances_from, shortest_path, MatchGraph, ReconstructionPath};

/// Relative tolerance under which two path lengths count as tied.
pub const LENGTH_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MspError {
    #[error("layer count must be >= 1")]
    NoLayers,
    #[error("kernel {0} has no exemplar")]
    MissingExemplar(usize),
    #[error("difference range must satisfy d_min <= d_max (got {0}, {1})")]
    BadRange(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MspConfig {
    pub layers: usize,
    /// Overrides the `[min d, max d]` range taken from the graph.
    pub range: Option<(f64, f64)>,
}

impl Default for MspConfig {
    fn default() -> Self {
        Self {
            layers: 15,
            range: None,
        }
    }
}

/// `phi_t = t * (d_max - d_min) / L + d_min` for `t = 1..=L`, with the last
/// cap pinned to `d_max`.
pub fn msp_thresholds(d_min: f64, d_max: f64, layers: usize) -> Result<Vec<f64>, MspError> {
    if layers == 0 {
        return Err(MspError::NoLayers);
    }
    if !(d_min <= d_max) {
        return Err(MspError::BadRange(d_min, d_max));
    }
    let step = (d_max - d_min) / layers as f64;
    let mut phi: Vec<f64> = (1..=layers).map(|t| t as f64 * step + d_min).collect();
    phi[layers - 1] = d_max;
    Ok(phi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ClusterAssignment {
    Clustered {
        leaf: usize,
        kernel: usize,
        /// 1-based layer index at which the kernel was first reached.
        layer: usize,
        path: ReconstructionPath,
    },
    Unclustered {
        leaf: usize,
    },
}

impl ClusterAssignment {
    pub fn leaf(&self) -> usize {
        match self {
            Self::Clustered { leaf, .. } | Self::Unclustered { leaf } => *leaf,
        }
    }

    pub fn kernel(&self) -> Option<usize> {
        match self {
            Self::Clustered { kernel, .. } => Some(*kernel),
            Self::Unclustered { .. } => None,
        }
    }
}

/// Assigns every non-kernel image. Output is ordered by leaf id.
pub fn cluster_leaves(
    g: &MatchGraph,
    kernels: &[Kernel],
    cfg: &MspConfig,
) -> Result<Vec<ClusterAssignment>, MspError> {
    let exemplars: Vec<usize> = kernels
        .iter()
        .map(|k| k.exemplar.ok_or(MspError::MissingExemplar(k.id)))
        .collect::<Result<_, _>>()?;
    let n = g.num_images();
    let mut in_kernel = vec![false; n];
    for k in kernels {
        for &v in &k.members {
            in_kernel[v] = true;
        }
    }
    let leaves: Vec<usize> = (0..n).filter(|&v| !in_kernel[v]).collect();
    let mut result: Vec<Option<ClusterAssignment>> = vec![None; leaves.len()];

    let range = match cfg.range {
        Some(r) => Some(r),
        None => g.difference_range(),
    };
    if let (Some((lo, hi)), false) = (range, kernels.is_empty()) {
        let phis = msp_thresholds(lo, hi, cfg.layers)?;
        for (t, &phi) in phis.iter().enumerate() {
            if result.iter().all(Option::is_some) {
                break;
            }
            let dists: Vec<Vec<f64>> = exemplars
                .iter()
                .map(|&x| distances_from(g, &[x], phi).0)
                .collect();
            for (slot, &leaf) in result.iter_mut().zip(&leaves) {
                if slot.is_some() {
                    continue;
                }
                let mut best: Option<(usize, f64)> = None;
                for (k, dist) in dists.iter().enumerate() {
                    let d = dist[leaf];
                    if !d.is_finite() {
                        continue;
                    }
                    match best {
                        Some((_, bd)) if d >= bd - LENGTH_TIE_TOL * (1.0 + bd) => {}
                        _ => best = Some((k, d)),
                    }
                }
                if let Some((k, _)) = best {
                    let path = shortest_path(g, leaf, &[exemplars[k]], phi)
                        .expect("reachable exemplar has a path");
                    *slot = Some(ClusterAssignment::Clustered {
                        leaf,
                        kernel: kernels[k].id,
                        layer: t + 1,
                        path,
                    });
                }
            }
        }
    }
    Ok(result
        .into_iter()
        .zip(&leaves)
        .map(|(a, &leaf)| a.unwrap_or(ClusterAssignment::Unclustered { leaf }))
        .collect())
}
