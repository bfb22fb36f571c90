//! Simulated local reconstructions in independent gauges.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::SimilarityTransform;
use super::scene::{Observation, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCamera {
    /// Maps model-frame directions into the camera frame.
    pub rotation: UnitQuaternion<f64>,
    pub center: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub label: String,
    pub cameras: BTreeMap<usize, ModelCamera>,
    /// Track id (scene point id) to position in the model frame.
    pub points: BTreeMap<usize, Vector3<f64>>,
    /// Track ids observed by each camera that are reconstructed in this model.
    pub tracks: BTreeMap<usize, BTreeSet<usize>>,
    /// Maps world coordinates into the model frame.
    pub gauge: SimilarityTransform,
    pub mergeable: bool,
}

impl LocalModel {
    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.gauge.inverse().apply(p)
    }

    /// Applies `t` to every camera and point and updates the gauge.
    pub fn transformed(&self, t: &SimilarityTransform) -> LocalModel {
        let mut out = self.clone();
        for c in out.cameras.values_mut() {
            *c = map_camera(c, t);
        }
        for p in out.points.values_mut() {
            *p = t.apply(p);
        }
        out.gauge = t.compose(&self.gauge);
        out
    }
}

/// Camera expressed in the frame reached by applying `t` to its own frame.
pub fn map_camera(c: &ModelCamera, t: &SimilarityTransform) -> ModelCamera {
    ModelCamera {
        rotation: c.rotation * t.rotation.inverse(),
        center: t.apply(&c.center),
    }
}

/// Reconstructs the points seen by at least two of `images`, perturbs points
/// and camera centers by isotropic Gaussian noise with RMS displacement
/// `noise`, then maps everything through a random gauge.
pub fn simulate_local_reconstruction<R: Rng + ?Sized>(
    scene: &Scene,
    images: &[usize],
    noise: f64,
    label: impl Into<String>,
    rng: &mut R,
) -> LocalModel {
    let images: BTreeSet<usize> = images.iter().copied().collect();
    let mut count: BTreeMap<usize, usize> = BTreeMap::new();
    for o in scene.observations.iter().filter(|o| images.contains(&o.camera)) {
        *count.entry(o.point).or_default() += 1;
    }
    let axis = Normal::new(0.0, noise / 3f64.sqrt()).expect("finite noise");
    let jitter = |rng: &mut R| {
        if noise > 0.0 {
            Vector3::new(axis.sample(rng), axis.sample(rng), axis.sample(rng))
        } else {
            Vector3::zeros()
        }
    };
    let gauge = SimilarityTransform::random(rng);
    let points: BTreeMap<usize, Vector3<f64>> = count
        .iter()
        .filter(|(_, &c)| c >= 2)
        .map(|(&p, _)| (p, gauge.apply(&(scene.points[p] + jitter(rng)))))
        .collect();
    let mut cameras = BTreeMap::new();
    let mut tracks: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &i in &images {
        let cam = &scene.cameras[i];
        let world = ModelCamera {
            rotation: cam.rotation,
            center: cam.center + jitter(rng),
        };
        cameras.insert(i, map_camera(&world, &gauge));
        tracks.insert(i, BTreeSet::new());
    }
    for o in scene.observations.iter().filter(|o| images.contains(&o.camera)) {
        if points.contains_key(&o.point) {
            tracks.get_mut(&o.camera).expect("camera present").insert(o.point);
        }
    }
    LocalModel {
        label: label.into(),
        mergeable: points.len() >= 3,
        cameras,
        points,
        tracks,
        gauge,
    }
}

/// Replaces the positions of a `fraction` of the model's tracks with the
/// position of another track at least `min_separation` away, emulating
/// mismatched track identities. Returns the corrupted track ids.
pub fn corrupt_track_ids<R: Rng + ?Sized>(
    model: &mut LocalModel,
    fraction: f64,
    min_separation: f64,
    rng: &mut R,
) -> Vec<usize> {
    let ids: Vec<usize> = model.points.keys().copied().collect();
    let n = ((ids.len() as f64) * fraction).round() as usize;
    let chosen: Vec<usize> = ids.choose_multiple(rng, n).copied().collect();
    let original = model.points.clone();
    let mut corrupted = Vec::new();
    for t in chosen {
        let p = original[&t];
        let donors: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|d| (original[d] - p).norm() >= min_separation)
            .collect();
        if let Some(&d) = donors.choose(rng) {
            model.points.insert(t, original[&d]);
            corrupted.push(t);
        }
    }
    corrupted.sort_unstable();
    corrupted
}

/// Mean pixel distance between observed pixels and the model's points
/// mapped to the world by `world_from_model` and projected through the
/// ground-truth cameras. Covers observations of the model's cameras whose
/// point is reconstructed in the model.
pub fn reprojection_error(model: &LocalModel, world_from_model: &SimilarityTransform, scene: &Scene) -> Option<f64> {
    let obs = model_observations(model, scene);
    if obs.is_empty() {
        return None;
    }
    let total: f64 = obs
        .iter()
        .map(|o| {
            let p = world_from_model.apply(&model.points[&o.point]);
            match scene.cameras[o.camera].project(&p) {
                Some(px) => ((px[0] - o.u).powi(2) + (px[1] - o.v).powi(2)).sqrt(),
                None => f64::INFINITY,
            }
        })
        .sum();
    Some(total / obs.len() as f64)
}

fn model_observations<'a>(model: &LocalModel, scene: &'a Scene) -> Vec<&'a Observation> {
    scene
        .observations
        .iter()
        .filter(|o| model.cameras.contains_key(&o.camera) && model.points.contains_key(&o.point))
        .collect()
}

/// Root-mean-square distance between the model's camera centers mapped to
/// the world and the ground-truth centers.
pub fn camera_rmse(model: &LocalModel, world_from_model: &SimilarityTransform, scene: &Scene) -> f64 {
    if model.cameras.is_empty() {
        return 0.0;
    }
    let sum: f64 = model
        .cameras
        .iter()
        .map(|(&i, c)| (world_from_model.apply(&c.center) - scene.cameras[i].center).norm_squared())
        .sum();
    (sum / model.cameras.len() as f64).sqrt()
}
