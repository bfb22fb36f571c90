//! Similarity transforms and their least-squares estimation.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.apply(&other.translation),
        }
    }

    pub fn inverse(&self) -> Self {
        let rinv = self.rotation.inverse();
        Self {
            scale: 1.0 / self.scale,
            rotation: rinv,
            translation: -(rinv * self.translation) / self.scale,
        }
    }

    /// Uniform random rotation, log-uniform scale in `[0.5, 2]` and
    /// translation in `[-10, 10]^3`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            scale: 2f64.powf(rng.random_range(-1.0..=1.0)),
            rotation: random_rotation(rng),
            translation: Vector3::from_fn(|_, _| rng.random_range(-10.0..=10.0)),
        }
    }
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let q = nalgebra::Quaternion::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum UmeyamaError {
    #[error("need at least 3 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("source and destination sizes differ ({0} vs {1})")]
    SizeMismatch(usize, usize),
    #[error("correspondences are collinear or coincident")]
    Degenerate,
    #[error("weights must be non-negative with a positive sum")]
    BadWeights,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UmeyamaFit {
    pub transform: SimilarityTransform,
    /// Weighted mean squared residual `|dst - T(src)|^2`.
    pub mse: f64,
    /// True when the determinant correction was needed to avoid a reflection.
    pub reflection_corrected: bool,
}

/// Least-squares similarity mapping `src` onto `dst`.
pub fn umeyama(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: Option<&[f64]>,
) -> Result<UmeyamaFit, UmeyamaError> {
    let n = src.len();
    if n != dst.len() {
        return Err(UmeyamaError::SizeMismatch(n, dst.len()));
    }
    if n < 3 {
        return Err(UmeyamaError::TooFewPoints(n));
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() != n => return Err(UmeyamaError::BadWeights),
        Some(w) => w.to_vec(),
        None => vec![1.0; n],
    };
    let total: f64 = w.iter().sum();
    if w.iter().any(|x| !(*x >= 0.0)) || !(total > 0.0) {
        return Err(UmeyamaError::BadWeights);
    }
    let w: Vec<f64> = w.iter().map(|x| x / total).collect();

    let mu_s: Vector3<f64> = src.iter().zip(&w).map(|(p, wi)| p * *wi).sum();
    let mu_d: Vector3<f64> = dst.iter().zip(&w).map(|(p, wi)| p * *wi).sum();
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    let mut var_s = 0.0;
    for ((s, d), wi) in src.iter().zip(dst).zip(&w) {
        let cs = s - mu_s;
        let cd = d - mu_d;
        cov += *wi * cd * cs.transpose();
        spread += *wi * cs * cs.transpose();
        var_s += wi * cs.norm_squared();
    }
    let sv = spread.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sv.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(var_s > 0.0) || ev[1] <= 1e-12 * ev[0].max(f64::MIN_POSITIVE) {
        return Err(UmeyamaError::Degenerate);
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = svd.singular_values;
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    let reflection = u.determinant() * v_t.determinant() < 0.0;
    if reflection {
        // flip the axis of the smallest singular value
        let (imin, _) = d.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &x)| {
            if x < acc.1 {
                (i, x)
            } else {
                acc
            }
        });
        signs[imin] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = d.dot(&signs) / var_s;
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = mu_d - scale * (rotation * mu_s);
    let transform = SimilarityTransform {
        scale,
        rotation,
        translation,
    };
    let mse = src
        .iter()
        .zip(dst)
        .zip(&w)
        .map(|((s, d), wi)| wi * (d - transform.apply(s)).norm_squared())
        .sum();
    Ok(UmeyamaFit {
        transform,
        mse,
        reflection_corrected: reflection,
    })
}
