//! Synthetic scenes with ground-truth cameras and points.

use std::collections::HashMap;
use std::fmt::Write as _;

use log::warn;
use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matchgraph::{build_graph_with, GraphError, ImageStats, MatchGraph, SimilarityMode};

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    BadSpec(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: usize,
    /// Maps world directions into the camera frame (x right, y down, z forward).
    pub rotation: UnitQuaternion<f64>,
    pub center: Vector3<f64>,
    pub focal: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn look_at(id: usize, center: Vector3<f64>, target: Vector3<f64>, focal: f64, width: u32, height: u32) -> Self {
        let z = (target - center).normalize();
        let up = if z.z.abs() > 0.99 { Vector3::x() } else { Vector3::z() };
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self {
            id,
            rotation: UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r)),
            center,
            focal,
            width,
            height,
        }
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.center)
    }

    /// Pixel coordinates, or `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        let c = self.to_camera(p);
        if c.z <= 1e-9 {
            return None;
        }
        Some([
            self.focal * c.x / c.z + self.width as f64 / 2.0,
            self.focal * c.y / c.z + self.height as f64 / 2.0,
        ])
    }

    pub fn in_image(&self, px: [f64; 2]) -> bool {
        px[0] >= 0.0 && px[0] < self.width as f64 && px[1] >= 0.0 && px[1] < self.height as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub camera: usize,
    pub point: usize,
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub cameras: Vec<Camera>,
    pub points: Vec<Vector3<f64>>,
    /// Sorted by (camera, point).
    pub observations: Vec<Observation>,
}

impl Scene {
    /// Diagonal of the axis-aligned bounding box of the points.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(self.points.iter())
    }

    /// Point ids seen by each camera, sorted.
    pub fn visibility(&self) -> Vec<Vec<usize>> {
        let mut vis = vec![Vec::new(); self.cameras.len()];
        for o in &self.observations {
            vis[o.camera].push(o.point);
        }
        for v in &mut vis {
            v.sort_unstable();
        }
        vis
    }

    /// `n_i` counts points of image i seen by at least two images and
    /// `n_ij` the points seen by both i and j.
    pub fn match_counts(&self) -> (Vec<ImageStats>, Vec<(usize, usize, u64)>) {
        let mut seen_by: Vec<Vec<usize>> = vec![Vec::new(); self.points.len()];
        for o in &self.observations {
            seen_by[o.point].push(o.camera);
        }
        let mut n = vec![0u64; self.cameras.len()];
        let mut pairs: HashMap<(usize, usize), u64> = HashMap::new();
        for cams in &mut seen_by {
            cams.sort_unstable();
            cams.dedup();
            if cams.len() < 2 {
                continue;
            }
            for (a, &i) in cams.iter().enumerate() {
                n[i] += 1;
                for &j in &cams[a + 1..] {
                    *pairs.entry((i, j)).or_default() += 1;
                }
            }
        }
        let stats = n
            .iter()
            .enumerate()
            .map(|(id, &n_features)| ImageStats { id, n_features })
            .collect();
        let mut matches: Vec<_> = pairs.into_iter().map(|((i, j), c)| (i, j, c)).collect();
        matches.sort_unstable();
        (stats, matches)
    }

    pub fn match_graph(&self, mode: SimilarityMode) -> Result<MatchGraph, SceneError> {
        let (stats, matches) = self.match_counts();
        Ok(build_graph_with(&stats, &matches, mode)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("cameras {}\n", self.cameras.len());
        for c in &self.cameras {
            let q = c.rotation.quaternion();
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {} {} {} {}",
                c.id, q.w, q.i, q.j, q.k, c.center.x, c.center.y, c.center.z, c.focal, c.width, c.height
            );
        }
        let _ = writeln!(out, "points {}", self.points.len());
        for (i, p) in self.points.iter().enumerate() {
            let _ = writeln!(out, "{i} {} {} {}", p.x, p.y, p.z);
        }
        let _ = writeln!(out, "observations {}", self.observations.len());
        for o in &self.observations {
            let _ = writeln!(out, "{} {} {} {}", o.camera, o.point, o.u, o.v);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let err = |line: usize, message: String| SceneError::Parse { line, message };
        let header = |name: &str, lines: &mut dyn Iterator<Item = (usize, &str)>| -> Result<usize, SceneError> {
            let (ln, l) = lines.next().ok_or_else(|| err(0, format!("missing '{name}' section")))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(name) {
                return Err(err(ln, format!("expected '{name} <count>'")));
            }
            it.next()
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| err(ln, format!("bad {name} count")))
        };
        fn fields<T: std::str::FromStr>(ln: usize, l: &str, n: usize) -> Result<Vec<T>, SceneError> {
            let v: Vec<T> = l
                .split_whitespace()
                .map(|x| x.parse::<T>())
                .collect::<Result<_, _>>()
                .map_err(|_| SceneError::Parse {
                    line: ln,
                    message: "malformed number".into(),
                })?;
            if v.len() != n {
                return Err(SceneError::Parse {
                    line: ln,
                    message: format!("expected {n} fields, got {}", v.len()),
                });
            }
            Ok(v)
        }

        let nc = header("cameras", &mut lines)?;
        let mut cameras = Vec::with_capacity(nc);
        for k in 0..nc {
            let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated cameras section".into()))?;
            let f: Vec<f64> = fields(ln, l, 11)?;
            if f[0] as usize != k {
                return Err(err(ln, format!("camera ids must be 0..{nc} in order")));
            }
            let q = nalgebra::Quaternion::new(f[1], f[2], f[3], f[4]);
            if (q.norm() - 1.0).abs() > 1e-6 {
                return Err(err(ln, "rotation quaternion is not unit norm".into()));
            }
            cameras.push(Camera {
                id: k,
                rotation: UnitQuaternion::from_quaternion(q),
                center: Vector3::new(f[5], f[6], f[7]),
                focal: f[8],
                width: f[9] as u32,
                height: f[10] as u32,
            });
        }
        let np = header("points", &mut lines)?;
        let mut points = Vec::with_capacity(np);
        for k in 0..np {
            let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated points section".into()))?;
            let f: Vec<f64> = fields(ln, l, 4)?;
            if f[0] as usize != k {
                return Err(err(ln, format!("point ids must be 0..{np} in order")));
            }
            points.push(Vector3::new(f[1], f[2], f[3]));
        }
        let no = header("observations", &mut lines)?;
        let mut observations = Vec::with_capacity(no);
        for _ in 0..no {
            let (ln, l) = lines.next().ok_or_else(|| err(0, "truncated observations section".into()))?;
            let f: Vec<f64> = fields(ln, l, 4)?;
            let (camera, point) = (f[0] as usize, f[1] as usize);
            if camera >= nc || point >= np {
                return Err(err(ln, format!("observation refers to unknown camera {camera} or point {point}")));
            }
            observations.push(Observation {
                camera,
                point,
                u: f[2],
                v: f[3],
            });
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "trailing content".into()));
        }
        observations.sort_by_key(|o| (o.camera, o.point));
        Ok(Scene {
            cameras,
            points,
            observations,
        })
    }
}

pub fn bbox_diagonal<'a>(points: impl Iterator<Item = &'a Vector3<f64>>) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let mut any = false;
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
        any = true;
    }
    if any {
        (hi - lo).norm()
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Layout {
    /// Cameras on a ring around a textured cylinder.
    Ring { cameras: usize, points: usize },
    /// Two facades, each with a dense camera run flanked by sparse cameras,
    /// optionally joined by narrow-view bridge cameras over a weakly
    /// textured gap.
    TwoBuilding { bridge_cameras: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub layout: Layout,
    /// Pixel noise standard deviation per image axis.
    pub pixel_noise: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedScene {
    pub scene: Scene,
    /// Points dropped because fewer than two cameras saw them.
    pub dropped_points: usize,
    /// Camera ids of planted dense regions (empty for the ring).
    pub dense_sets: Vec<Vec<usize>>,
}

const FOCAL: f64 = 500.0;
const WIDTH: u32 = 640;
const HEIGHT: u32 = 480;

struct Draft {
    cameras: Vec<Camera>,
    points: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    max_angle: f64,
}

pub fn gen_scene(spec: &SceneSpec) -> Result<GeneratedScene, SceneError> {
    if !(spec.pixel_noise >= 0.0) {
        return Err(SceneError::BadSpec("pixel noise must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (draft, dense_sets) = match spec.layout {
        Layout::Ring { cameras, points } => {
            if cameras < 2 || points < 10 {
                return Err(SceneError::BadSpec("ring needs >= 2 cameras and >= 10 points".into()));
            }
            (ring(cameras, points, &mut rng), Vec::new())
        }
        Layout::TwoBuilding { bridge_cameras } => two_building(bridge_cameras, &mut rng),
    };
    Ok(observe(draft, dense_sets, spec.pixel_noise, &mut rng))
}

fn ring(n_cams: usize, n_points: usize, rng: &mut ChaCha8Rng) -> Draft {
    let mut points = Vec::with_capacity(n_points);
    let mut normals = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let h = rng.random_range(-1.0..1.0);
        points.push(Vector3::new(a.cos(), a.sin(), h));
        normals.push(Vector3::new(a.cos(), a.sin(), 0.0));
    }
    let cameras = (0..n_cams)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n_cams as f64;
            let c = Vector3::new(8.0 * a.cos(), 8.0 * a.sin(), 0.0);
            Camera::look_at(i, c, Vector3::zeros(), FOCAL, WIDTH, HEIGHT)
        })
        .collect();
    Draft {
        cameras,
        points,
        normals,
        max_angle: 60f64.to_radians(),
    }
}

/// Camera x positions of one building relative to its left end.
fn building_camera_xs() -> (Vec<f64>, std::ops::Range<usize>) {
    let mut xs: Vec<f64> = (0..6).map(|i| 2.4 * i as f64).collect();
    let dense_start = xs.len();
    let d0 = xs[5] + 2.4;
    xs.extend((0..10).map(|j| d0 + 0.4 * j as f64));
    let s0 = xs[xs.len() - 1] + 2.4;
    xs.extend((0..6).map(|i| s0 + 2.4 * i as f64));
    (xs, dense_start..dense_start + 10)
}

fn two_building(n_bridge: usize, rng: &mut ChaCha8Rng) -> (Draft, Vec<Vec<usize>>) {
    // Facades lie in the plane y = 0 facing +y; cameras at y = DIST see a
    // window of half-width 2 along x.
    const DIST: f64 = 2.0 * FOCAL / (WIDTH as f64 / 2.0);
    const FACADE_DENSITY: f64 = 30.0;
    const GAP_DENSITY: f64 = 3.0;
    // distance from the outermost building camera to the nearest bridge camera
    const BRIDGE_STANDOFF: f64 = 3.85;
    let (xs, dense) = building_camera_xs();
    let span = xs[xs.len() - 1];
    let gap = if n_bridge == 0 {
        17.0
    } else {
        2.0 * BRIDGE_STANDOFF + 2.4 * (n_bridge - 1) as f64
    };
    let b_offset = span + gap;
    let bridge_step = 2.4;

    let mut cam_xs: Vec<f64> = xs.clone();
    cam_xs.extend((0..n_bridge).map(|k| span + BRIDGE_STANDOFF + bridge_step * k as f64));
    cam_xs.extend(xs.iter().map(|x| x + b_offset));
    let cameras = cam_xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            Camera::look_at(i, Vector3::new(x, DIST, 0.0), Vector3::new(x, 0.0, 0.0), FOCAL, WIDTH, HEIGHT)
        })
        .collect();
    let dense_sets = vec![
        dense.clone().collect(),
        dense.map(|k| k + xs.len() + n_bridge).collect(),
    ];

    let mut points = Vec::new();
    let mut strip = |x0: f64, x1: f64, density: f64, points: &mut Vec<Vector3<f64>>| {
        let n = ((x1 - x0) * density).round() as usize;
        for k in 0..n {
            let x = x0 + (k as f64 + rng.random_range(0.0..1.0)) / density;
            points.push(Vector3::new(x, 0.0, rng.random_range(-1.0..1.0)));
        }
    };
    strip(-2.0, span + 2.0, FACADE_DENSITY, &mut points);
    strip(span + 2.0, b_offset - 2.0, GAP_DENSITY, &mut points);
    strip(b_offset - 2.0, b_offset + span + 2.0, FACADE_DENSITY, &mut points);
    let normals = vec![Vector3::y(); points.len()];
    (
        Draft {
            cameras,
            points,
            normals,
            max_angle: 80f64.to_radians(),
        },
        dense_sets,
    )
}

fn observe(draft: Draft, dense_sets: Vec<Vec<usize>>, pixel_noise: f64, rng: &mut ChaCha8Rng) -> GeneratedScene {
    let cos_max = draft.max_angle.cos();
    let mut seen: Vec<Vec<(usize, [f64; 2])>> = vec![Vec::new(); draft.points.len()];
    for (pi, (p, n)) in draft.points.iter().zip(&draft.normals).enumerate() {
        for c in &draft.cameras {
            let to_cam = (c.center - p).normalize();
            if to_cam.dot(n) < cos_max {
                continue;
            }
            if let Some(px) = c.project(p).filter(|px| c.in_image(*px)) {
                seen[pi].push((c.id, px));
            }
        }
    }
    let noise = Normal::new(0.0, pixel_noise).expect("finite sigma");
    let mut points = Vec::new();
    let mut observations = Vec::new();
    let mut dropped = 0;
    for (p, obs) in draft.points.iter().zip(seen) {
        if obs.len() < 2 {
            dropped += 1;
            continue;
        }
        let id = points.len();
        points.push(*p);
        for (cam, px) in obs {
            let (du, dv) = if pixel_noise > 0.0 {
                (noise.sample(rng), noise.sample(rng))
            } else {
                (0.0, 0.0)
            };
            observations.push(Observation {
                camera: cam,
                point: id,
                u: px[0] + du,
                v: px[1] + dv,
            });
        }
    }
    if dropped > 0 {
        warn!("{dropped} generated points were seen by fewer than two cameras and were dropped");
    }
    observations.sort_by_key(|o| (o.camera, o.point));
    GeneratedScene {
        scene: Scene {
            cameras: draft.cameras,
            points,
            observations,
        },
        dropped_points: dropped,
        dense_sets,
    }
}
