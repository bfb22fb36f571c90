//! Desk-scale stand-in for the reconstruction stage: synthetic scenes with
//! ground truth, local models in random gauges, and model merging.

pub mod geometry;
pub mod merge;
pub mod model;
pub mod run;
pub mod scene;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::{umeyama, SimilarityTransform, UmeyamaError, UmeyamaFit};
pub use merge::{merge_models, MergeInfo, MergeRefusal, RansacParams};
pub use model::{corrupt_track_ids, reprojection_error, simulate_local_reconstruction, LocalModel};
pub use run::{simulate, SimOutcome, SimReport};
pub use scene::{gen_scene, Camera, Layout, Scene, SceneError, SceneSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("tree covers {tree_images} images but the scene has {scene_cameras} cameras; unknown ids: {unknown:?}")]
    Mismatch {
        tree_images: usize,
        scene_cameras: usize,
        unknown: Vec<usize>,
    },
    #[error("invalid simulation parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Schedule(#[from] crate::schedule::ScheduleError),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// RMS point and camera-center displacement as a fraction of the scene
    /// bounding-box diagonal.
    pub geom_noise: f64,
    /// Minimum shared-track count is `tau + 1`.
    pub tau: usize,
    pub corrupt_fraction: f64,
    pub ransac: RansacParams,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            geom_noise: 0.005,
            tau: 12,
            corrupt_fraction: 0.0,
            ransac: RansacParams::default(),
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.geom_noise >= 0.0 && self.geom_noise.is_finite()) {
            return Err(SimError::BadParams("geom_noise must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return Err(SimError::BadParams("corrupt_fraction must lie in [0, 1]".into()));
        }
        if !(self.ransac.threshold > 0.0) || !(0.0..1.0).contains(&self.ransac.confidence) || self.ransac.max_iterations == 0 {
            return Err(SimError::BadParams("bad RANSAC parameters".into()));
        }
        Ok(())
    }
}
