//! Executes the two-stage plan of a reconstruction tree on a synthetic scene.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::merge::{merge_models, overlap, MergeRefusal};
use super::model::{camera_rmse, corrupt_track_ids, reprojection_error, simulate_local_reconstruction, LocalModel};
use super::scene::Scene;
use super::{SimError, SimParams};
use crate::pipeline::{with_pool, ScheduleSummary};
use crate::schedule::{plan_schedule, Workers};
use crate::tree::TmrTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub label: String,
    pub cameras: usize,
    pub points: usize,
    pub mergeable: bool,
    pub corrupted_tracks: usize,
    pub reprojection_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeStage {
    LeafIntoBase,
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub stage: MergeStage,
    pub base: String,
    pub other: String,
    pub accepted: bool,
    pub best_image: Option<usize>,
    pub shared: usize,
    pub inliers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refusal: Option<MergeRefusal>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalModelReport {
    pub label: String,
    pub cameras: Vec<usize>,
    pub points: usize,
    pub mean_reprojection_error: Option<f64>,
    pub camera_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scene_cameras: usize,
    pub scene_points: usize,
    pub bbox_diagonal: f64,
    pub nodes: Vec<NodeReport>,
    pub merges: Vec<MergeRecord>,
    pub final_models: Vec<FinalModelReport>,
    /// Images left out of every node.
    pub unreconstructed: Vec<usize>,
    pub schedule: ScheduleSummary,
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub report: SimReport,
    pub models: Vec<LocalModel>,
}

fn node_seed(base: u64, kind: u64, id: usize) -> u64 {
    // splitmix-style mixing keeps per-node streams independent of scheduling
    let mut z = base ^ kind.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (id as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Checks that every image id of the tree is a camera of the scene.
pub fn check_tree_matches_scene(tree: &TmrTree, scene: &Scene) -> Result<(), SimError> {
    if tree.num_images != scene.cameras.len() {
        let unknown: Vec<usize> = (scene.cameras.len()..tree.num_images).collect();
        return Err(SimError::Mismatch {
            tree_images: tree.num_images,
            scene_cameras: scene.cameras.len(),
            unknown,
        });
    }
    Ok(())
}

pub fn simulate(
    scene: &Scene,
    tree: &TmrTree,
    params: &SimParams,
    workers: Option<usize>,
    merge_cost: f64,
) -> Result<SimOutcome, SimError> {
    check_tree_matches_scene(tree, scene)?;
    params.validate()?;
    let plan = plan_schedule(tree, workers.map_or(Workers::Unlimited, Workers::Limited), merge_cost)?;
    let out = with_pool(workers, || execute(scene, tree, params))?;
    let (mut report, models) = out;
    report.schedule = ScheduleSummary {
        workers: plan.workers,
        makespan: plan.makespan,
        serial: plan.serial,
        speedup: plan.speedup,
    };
    Ok(SimOutcome { report, models })
}

fn build_node(scene: &Scene, images: &[usize], label: String, params: &SimParams, seed: u64) -> (LocalModel, usize) {
    let diag = scene.bbox_diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = simulate_local_reconstruction(scene, images, params.geom_noise * diag, label, &mut rng);
    let corrupted = if params.corrupt_fraction > 0.0 {
        let sep = 0.1 * diag * m.gauge.scale;
        corrupt_track_ids(&mut m, params.corrupt_fraction, sep, &mut rng).len()
    } else {
        0
    };
    (m, corrupted)
}

fn node_report(m: &LocalModel, corrupted: usize, scene: &Scene) -> NodeReport {
    NodeReport {
        label: m.label.clone(),
        cameras: m.cameras.len(),
        points: m.points.len(),
        mergeable: m.mergeable,
        corrupted_tracks: corrupted,
        reprojection_error: reprojection_error(m, &m.gauge.inverse(), scene),
    }
}

fn record(stage: MergeStage, a: &LocalModel, b: &LocalModel, res: &Result<(LocalModel, super::merge::MergeInfo), MergeRefusal>) -> MergeRecord {
    match res {
        Ok((_, info)) => MergeRecord {
            stage,
            base: a.label.clone(),
            other: b.label.clone(),
            accepted: true,
            best_image: Some(info.best_image),
            shared: info.shared,
            inliers: info.inliers.len(),
            refusal: None,
        },
        Err(r) => MergeRecord {
            stage,
            base: a.label.clone(),
            other: b.label.clone(),
            accepted: false,
            best_image: match r {
                MergeRefusal::InsufficientOverlap { best_image, .. } => *best_image,
                _ => None,
            },
            shared: match r {
                MergeRefusal::InsufficientOverlap { shared, .. } | MergeRefusal::InconsistentGeometry { shared, .. } => *shared,
                _ => 0,
            },
            inliers: match r {
                MergeRefusal::InconsistentGeometry { inliers, .. } => *inliers,
                _ => 0,
            },
            refusal: Some(r.clone()),
        },
    }
}

fn execute(scene: &Scene, tree: &TmrTree, params: &SimParams) -> (SimReport, Vec<LocalModel>) {
    // stage 1: kernels
    let bases: Vec<(LocalModel, usize)> = tree
        .kernels
        .par_iter()
        .map(|k| build_node(scene, &k.members, format!("K{}", k.id), params, node_seed(params.seed, 1, k.id)))
        .collect();
    // stage 2: leaf clusters, each reconstructed together with its kernel
    let active: Vec<_> = tree.leaf_clusters.iter().filter(|c| !c.quarantined).collect();
    let leaves: Vec<(LocalModel, usize)> = active
        .par_iter()
        .map(|c| {
            let mut images = tree.kernels[c.kernel].members.clone();
            images.extend(&c.members);
            build_node(scene, &images, format!("L{}", c.id), params, node_seed(params.seed, 2, c.id))
        })
        .collect();

    let mut nodes: Vec<NodeReport> = bases.iter().map(|(m, c)| node_report(m, *c, scene)).collect();
    nodes.extend(leaves.iter().map(|(m, c)| node_report(m, *c, scene)));

    // leaf-cluster models into their base, ascending leaf-cluster id
    let per_kernel: Vec<(LocalModel, Vec<LocalModel>, Vec<MergeRecord>)> = tree
        .kernels
        .par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(node_seed(params.seed, 3, k.id));
            let mut base = bases[k.id].0.clone();
            let mut stray = Vec::new();
            let mut log = Vec::new();
            for (m, _) in active.iter().zip(&leaves).filter(|(c, _)| c.kernel == k.id).map(|(_, l)| l) {
                let res = merge_models(&base, m, params.tau, &params.ransac, &mut rng);
                log.push(record(MergeStage::LeafIntoBase, &base, m, &res));
                match res {
                    Ok((merged, _)) => base = merged,
                    Err(_) => stray.push(m.clone()),
                }
            }
            (base, stray, log)
        })
        .collect();

    let mut merges = Vec::new();
    let mut models = Vec::new();
    for (base, stray, log) in per_kernel {
        merges.extend(log);
        models.push(base);
        models.extend(stray);
    }

    // image-cluster models, greedily by descending overlap
    let mut rng = ChaCha8Rng::seed_from_u64(node_seed(params.seed, 4, 0));
    let mut refused: std::collections::BTreeSet<(String, String)> = Default::default();
    loop {
        let mut cands: Vec<(usize, usize, usize)> = Vec::new();
        for i in 0..models.len() {
            for j in 0..models.len() {
                if i == j || refused.contains(&(models[i].label.clone(), models[j].label.clone())) {
                    continue;
                }
                let o = overlap(&models[i], &models[j]);
                if o > 0 {
                    cands.push((o, i, j));
                }
            }
        }
        cands.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut progressed = false;
        for &(_, i, j) in &cands {
            let res = merge_models(&models[i], &models[j], params.tau, &params.ransac, &mut rng);
            merges.push(record(MergeStage::Global, &models[i], &models[j], &res));
            match res {
                Ok((merged, _)) => {
                    models[i] = merged;
                    models.remove(j);
                    progressed = true;
                    break;
                }
                Err(_) => {
                    refused.insert((models[i].label.clone(), models[j].label.clone()));
                }
            }
        }
        if !progressed {
            break;
        }
    }
    if models.len() > 1 {
        warn!("{} final models remain after merging", models.len());
    }
    // pairs never attempted because they share nothing are reported too
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            if overlap(&models[i], &models[j]) == 0 && overlap(&models[j], &models[i]) == 0 {
                let res = merge_models(&models[i], &models[j], params.tau, &params.ransac, &mut rng);
                merges.push(record(MergeStage::Global, &models[i], &models[j], &res));
            }
        }
    }
    info!("{} final models", models.len());

    let final_models = models
        .iter()
        .map(|m| {
            let inv = m.gauge.inverse();
            FinalModelReport {
                label: m.label.clone(),
                cameras: m.cameras.keys().copied().collect(),
                points: m.points.len(),
                mean_reprojection_error: reprojection_error(m, &inv, scene),
                camera_rmse: camera_rmse(m, &inv, scene),
            }
        })
        .collect();
    let mut covered = vec![false; scene.cameras.len()];
    for m in &models {
        for &c in m.cameras.keys() {
            covered[c] = true;
        }
    }
    let report = SimReport {
        scene_cameras: scene.cameras.len(),
        scene_points: scene.points.len(),
        bbox_diagonal: scene.bbox_diagonal(),
        nodes,
        merges,
        final_models,
        unreconstructed: (0..scene.cameras.len()).filter(|&i| !covered[i]).collect(),
        schedule: ScheduleSummary {
            workers: Workers::Unlimited,
            makespan: 0.0,
            serial: 0.0,
            speedup: 1.0,
        },
    };
    (report, models)
}
