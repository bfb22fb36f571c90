//! The three-layer reconstruction tree: all images at the root, kernels in
//! the middle, leaf clusters at the bottom.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::Kernel;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("images assigned more than once: {0:?}")]
    Overlap(Vec<usize>),
    #[error("images not assigned anywhere: {0:?}")]
    Orphan(Vec<usize>),
    #[error("image ids out of range: {0:?}")]
    UnknownImage(Vec<usize>),
    #[error("leaf cluster {cluster} refers to unknown kernel {kernel}")]
    UnknownKernel { cluster: usize, kernel: usize },
    #[error("leaf cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("kernel ids must be 0..K in order; found {0}")]
    KernelOrder(usize),
    #[error("malformed tree document: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafCluster {
    pub id: usize,
    pub kernel: usize,
    /// Sorted member image ids.
    pub members: Vec<usize>,
    /// Leaves without a path to the kernel inside their image cluster.
    #[serde(default)]
    pub quarantined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TmrTree {
    pub num_images: usize,
    pub kernels: Vec<Kernel>,
    pub leaf_clusters: Vec<LeafCluster>,
    pub unclustered: Vec<usize>,
}

/// Where an image ended up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Kernel(usize),
    LeafCluster(usize),
    Unclustered,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub num_images: usize,
    pub kernels: usize,
    pub leaf_clusters: usize,
    pub kernel_images: usize,
    pub leaf_images: usize,
    pub unclustered: usize,
    /// Leaf cluster count per kernel id.
    pub leaf_clusters_per_kernel: Vec<usize>,
}

/// Validates coverage and builds the tree. Inputs are normalized: member
/// lists are sorted and leaf clusters are ordered by (kernel, smallest member)
/// and renumbered from 0.
pub fn build_tree(
    num_images: usize,
    kernels: Vec<Kernel>,
    mut leaf_clusters: Vec<LeafCluster>,
    mut unclustered: Vec<usize>,
) -> Result<TmrTree, TreeError> {
    for (i, k) in kernels.iter().enumerate() {
        if k.id != i {
            return Err(TreeError::KernelOrder(k.id));
        }
    }
    for c in &mut leaf_clusters {
        if c.kernel >= kernels.len() {
            return Err(TreeError::UnknownKernel {
                cluster: c.id,
                kernel: c.kernel,
            });
        }
        if c.members.is_empty() {
            return Err(TreeError::EmptyCluster(c.id));
        }
        c.members.sort_unstable();
    }
    leaf_clusters.sort_by(|a, b| (a.kernel, a.quarantined, &a.members).cmp(&(b.kernel, b.quarantined, &b.members)));
    for (i, c) in leaf_clusters.iter_mut().enumerate() {
        c.id = i;
    }
    unclustered.sort_unstable();

    let mut count = vec![0usize; num_images];
    let mut unknown = Vec::new();
    let all = kernels
        .iter()
        .flat_map(|k| k.members.iter())
        .chain(leaf_clusters.iter().flat_map(|c| c.members.iter()))
        .chain(unclustered.iter());
    for &v in all {
        match count.get_mut(v) {
            Some(c) => *c += 1,
            None => unknown.push(v),
        }
    }
    if !unknown.is_empty() {
        unknown.sort_unstable();
        unknown.dedup();
        return Err(TreeError::UnknownImage(unknown));
    }
    let overlap: Vec<usize> = (0..num_images).filter(|&v| count[v] > 1).collect();
    if !overlap.is_empty() {
        return Err(TreeError::Overlap(overlap));
    }
    let orphan: Vec<usize> = (0..num_images).filter(|&v| count[v] == 0).collect();
    if !orphan.is_empty() {
        return Err(TreeError::Orphan(orphan));
    }
    Ok(TmrTree {
        num_images,
        kernels,
        leaf_clusters,
        unclustered,
    })
}

impl TmrTree {
    pub fn clusters_of(&self, kernel: usize) -> impl Iterator<Item = &LeafCluster> {
        self.leaf_clusters.iter().filter(move |c| c.kernel == kernel)
    }

    pub fn placements(&self) -> Vec<Placement> {
        let mut out = vec![Placement::Unclustered; self.num_images];
        for k in &self.kernels {
            for &v in &k.members {
                out[v] = Placement::Kernel(k.id);
            }
        }
        for c in &self.leaf_clusters {
            for &v in &c.members {
                out[v] = Placement::LeafCluster(c.id);
            }
        }
        out
    }

    pub fn summary(&self) -> TreeSummary {
        let mut per = vec![0; self.kernels.len()];
        for c in &self.leaf_clusters {
            per[c.kernel] += 1;
        }
        TreeSummary {
            num_images: self.num_images,
            kernels: self.kernels.len(),
            leaf_clusters: self.leaf_clusters.len(),
            kernel_images: self.kernels.iter().map(|k| k.members.len()).sum(),
            leaf_images: self.leaf_clusters.iter().map(|c| c.members.len()).sum(),
            unclustered: self.unclustered.len(),
            leaf_clusters_per_kernel: per,
        }
    }

    /// Images of the image cluster rooted at `kernel`: kernel members plus
    /// the members of its non-quarantined leaf clusters, sorted.
    pub fn image_cluster(&self, kernel: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.kernels[kernel].members.clone();
        for c in self.clusters_of(kernel).filter(|c| !c.quarantined) {
            v.extend(&c.members);
        }
        v.sort_unstable();
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    /// Parses and re-validates a tree document.
    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let t: TmrTree = serde_json::from_str(text).map_err(|e| TreeError::Format(e.to_string()))?;
        build_tree(t.num_images, t.kernels, t.leaf_clusters, t.unclustered)
    }

    /// Leaf cluster counts keyed by kernel id.
    pub fn fanout(&self) -> BTreeMap<usize, usize> {
        let mut m: BTreeMap<usize, usize> = self.kernels.iter().map(|k| (k.id, 0)).collect();
        for c in &self.leaf_clusters {
            *m.entry(c.kernel).or_default() += 1;
        }
        m
    }
}
