//! Merging two local models through their shared tracks.

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::geometry::{umeyama, SimilarityTransform};
use super::model::{map_camera, LocalModel};
use super::scene::bbox_diagonal;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub max_iterations: usize,
    /// Stop early once this probability of having drawn an all-inlier sample
    /// is reached.
    pub confidence: f64,
    /// Inlier distance as a fraction of the bounding-box diagonal of the
    /// first model's points.
    pub threshold: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            confidence: 0.999,
            threshold: 0.01,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum MergeRefusal {
    #[error("model {label} is not mergeable")]
    NotMergeable { label: String },
    #[error("insufficient overlap: best image {best_image:?} shares {shared} tracks (need more than {tau})")]
    InsufficientOverlap {
        best_image: Option<usize>,
        shared: usize,
        tau: usize,
    },
    #[error("inconsistent geometry: {inliers} of {shared} shared tracks agree (need {tau})")]
    InconsistentGeometry { shared: usize, inliers: usize, tau: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeInfo {
    pub best_image: usize,
    pub shared: usize,
    /// Shared track ids accepted by RANSAC, sorted.
    pub inliers: Vec<usize>,
    pub outliers: Vec<usize>,
    /// Maps the second model's frame into the first's.
    pub transform: SimilarityTransform,
    pub iterations: usize,
}

/// The image of `m2` with the most tracks reconstructed in `m1` (smallest id
/// on ties) and those shared track ids.
pub fn best_shared_image(m1: &LocalModel, m2: &LocalModel) -> Option<(usize, Vec<usize>)> {
    m2.tracks
        .iter()
        .map(|(&img, tracks)| {
            let shared: Vec<usize> = tracks
                .iter()
                .copied()
                .filter(|t| m1.points.contains_key(t) && m2.points.contains_key(t))
                .collect();
            (img, shared)
        })
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
}

/// Number of tracks the best image of `m2` shares with `m1`.
pub fn overlap(m1: &LocalModel, m2: &LocalModel) -> usize {
    best_shared_image(m1, m2).map_or(0, |(_, s)| s.len())
}

fn inliers_of(t: &SimilarityTransform, src: &[Vector3<f64>], dst: &[Vector3<f64>], thr: f64) -> Vec<usize> {
    (0..src.len())
        .filter(|&k| (dst[k] - t.apply(&src[k])).norm() <= thr)
        .collect()
}

/// Maps `m2` into `m1`'s frame and unions the models, keeping `m1`'s copy of
/// shared cameras and tracks.
pub fn merge_models<R: Rng + ?Sized>(
    m1: &LocalModel,
    m2: &LocalModel,
    tau: usize,
    params: &RansacParams,
    rng: &mut R,
) -> Result<(LocalModel, MergeInfo), MergeRefusal> {
    for m in [m1, m2] {
        if !m.mergeable {
            return Err(MergeRefusal::NotMergeable { label: m.label.clone() });
        }
    }
    let (best_image, shared) = match best_shared_image(m1, m2) {
        Some((img, s)) if s.len() > tau => (img, s),
        other => {
            return Err(MergeRefusal::InsufficientOverlap {
                best_image: other.as_ref().map(|o| o.0),
                shared: other.map_or(0, |o| o.1.len()),
                tau,
            })
        }
    };
    let src: Vec<Vector3<f64>> = shared.iter().map(|t| m2.points[t]).collect();
    let dst: Vec<Vector3<f64>> = shared.iter().map(|t| m1.points[t]).collect();
    let thr = params.threshold * bbox_diagonal(m1.points.values());
    let n = shared.len();

    let mut best: Vec<usize> = Vec::new();
    let mut needed = params.max_iterations;
    let mut iterations = 0;
    while iterations < needed.min(params.max_iterations) {
        iterations += 1;
        let idx = sample(rng, n, 3).into_vec();
        let s: Vec<_> = idx.iter().map(|&k| src[k]).collect();
        let d: Vec<_> = idx.iter().map(|&k| dst[k]).collect();
        let Ok(fit) = umeyama(&s, &d, None) else {
            continue;
        };
        if !(fit.transform.scale > 0.0) {
            continue;
        }
        let inl = inliers_of(&fit.transform, &src, &dst, thr);
        if inl.len() > best.len() {
            best = inl;
            let w = best.len() as f64 / n as f64;
            let miss = 1.0 - w.powi(3);
            needed = if miss <= 0.0 {
                0
            } else {
                ((1.0 - params.confidence).ln() / miss.ln()).ceil().max(0.0) as usize
            };
        }
    }

    let mut transform = None;
    for _ in 0..3 {
        if best.len() < 3 {
            break;
        }
        let s: Vec<_> = best.iter().map(|&k| src[k]).collect();
        let d: Vec<_> = best.iter().map(|&k| dst[k]).collect();
        let Ok(fit) = umeyama(&s, &d, None) else { break };
        let refined = inliers_of(&fit.transform, &src, &dst, thr);
        transform = Some(fit.transform);
        if refined == best {
            break;
        }
        best = refined;
    }
    let transform = match transform {
        Some(t) if best.len() >= tau => t,
        _ => {
            return Err(MergeRefusal::InconsistentGeometry {
                shared: n,
                inliers: best.len(),
                tau,
            })
        }
    };

    let mut merged = m1.clone();
    merged.label = format!("{}+{}", m1.label, m2.label);
    for (id, c) in &m2.cameras {
        merged.cameras.entry(*id).or_insert_with(|| map_camera(c, &transform));
    }
    for (id, p) in &m2.points {
        merged.points.entry(*id).or_insert_with(|| transform.apply(p));
    }
    for (id, tracks) in &m2.tracks {
        merged.tracks.entry(*id).or_default().extend(tracks.iter().copied());
    }
    let inlier_ids: Vec<usize> = best.iter().map(|&k| shared[k]).collect();
    let outliers: Vec<usize> = shared.iter().copied().filter(|t| inlier_ids.binary_search(t).is_err()).collect();
    Ok((
        merged,
        MergeInfo {
            best_image,
            shared: n,
            inliers: inlier_ids,
            outliers,
            transform,
            iterations,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconsim::model::simulate_local_reconstruction;
    use crate::reconsim::scene::{gen_scene, Layout, SceneSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> crate::reconsim::scene::Scene {
        gen_scene(&SceneSpec {
            layout: Layout::Ring {
                cameras: 16,
                points: 800,
            },
            pixel_noise: 0.0,
            seed: 2,
        })
        .unwrap()
        .scene
    }

    #[test]
    fn identical_models_merge_with_identity() {
        let s = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = simulate_local_reconstruction(&s, &[0, 1, 2], 0.0, "a", &mut rng);
        let (merged, info) = merge_models(&m, &m, 12, &RansacParams::default(), &mut rng).unwrap();
        assert!(info.outliers.is_empty());
        assert!((info.transform.scale - 1.0).abs() < 1e-9);
        assert!(info.transform.translation.norm() < 1e-6);
        assert_eq!(merged.points.len(), m.points.len());
    }

    #[test]
    fn disjoint_models_are_refused() {
        let s = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = simulate_local_reconstruction(&s, &[0, 1], 0.0, "a", &mut rng);
        let b = simulate_local_reconstruction(&s, &[8, 9], 0.0, "b", &mut rng);
        assert!(matches!(
            merge_models(&a, &b, 12, &RansacParams::default(), &mut rng),
            Err(MergeRefusal::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn overlapping_models_recover_relative_gauge() {
        let s = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = simulate_local_reconstruction(&s, &[0, 1, 2, 3], 0.0, "a", &mut rng);
        let b = simulate_local_reconstruction(&s, &[2, 3, 4, 5], 0.0, "b", &mut rng);
        let (merged, info) = merge_models(&a, &b, 12, &RansacParams::default(), &mut rng).unwrap();
        let expect = a.gauge.compose(&b.gauge.inverse());
        assert!((info.transform.scale - expect.scale).abs() < 1e-9);
        assert!(info.transform.rotation.angle_to(&expect.rotation) < 1e-7);
        assert_eq!(merged.cameras.len(), 6);
        let inv = merged.gauge.inverse();
        for (&t, p) in &merged.points {
            assert!((inv.apply(p) - s.points[t]).norm() < 1e-7);
        }
    }
}
