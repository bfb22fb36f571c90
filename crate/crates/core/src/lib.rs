//! Partitioning of an image matching graph into a three-layer reconstruction
//! tree (kernels, image clusters, leaf clusters), a parallel schedule for it,
//! and a synthetic-scene simulator that exercises the model-merging stage.

pub mod config;
pub mod exemplar;
pub mod kernels;
pub mod matchgraph;
pub mod mspcluster;
pub mod pipeline;
pub mod rac;
pub mod reconsim;
pub mod schedule;
pub mod tree;
mod unionfind;

pub use matchgraph::{build_graph, MatchGraph, ReconstructionPath};
pub use unionfind::UnionFind;
