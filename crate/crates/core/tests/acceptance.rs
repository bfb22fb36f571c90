//! Acceptance suite: one PASS/FAIL line per criterion, with its runtime
//! against the allowed budget.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::*;
use tmr::config::{KernelSize, RunConfig};
use tmr::exemplar::{score_candidates, ScoreScope};
use tmr::kernels::{auto_kernel_size, find_kernels, layer_thresholds, mean_internal_similarity, FloorMode, KernelConfig};
use tmr::matchgraph::{similarity, SimilarityMode};
use tmr::mspcluster::{cluster_leaves, msp_thresholds, ClusterAssignment, MspConfig};
use tmr::pipeline::partition;
use tmr::rac::{rac_split, target_count, RacConfig};
use tmr::reconsim::geometry::{umeyama, SimilarityTransform};
use tmr::reconsim::merge::{merge_models, MergeRefusal, RansacParams};
use tmr::reconsim::model::{corrupt_track_ids, LocalModel, ModelCamera};
use tmr::reconsim::run::MergeStage;
use tmr::reconsim::{gen_scene, simulate, Layout, SceneSpec};
use tmr::schedule::{plan_schedule, Workers};
use tmr::{build_graph, MatchGraph};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn formula_suite() -> Check {
    let tol = 1e-12;
    ensure!(close(similarity(100, 150, 50, SimilarityMode::Union).unwrap(), 0.25, tol), "s(100,150,50)");
    ensure!(close(similarity(80, 80, 80, SimilarityMode::Union).unwrap(), 1.0, tol), "s(80,80,80)");
    let g = build_graph(
        &[
            tmr::matchgraph::ImageStats { id: 0, n_features: 100 },
            tmr::matchgraph::ImageStats { id: 1, n_features: 150 },
        ],
        &[(0, 1, 50)],
    )
    .map_err(|e| e.to_string())?;
    ensure!(close(g.edges()[0].d, 0.75, tol), "d = 1 - s");

    let t = layer_thresholds(0.1, 1.0, 3).map_err(|e| e.to_string())?;
    ensure!(close(t[0], 1.0, tol) && close(t[1], 0.7, tol) && close(t[2], 0.5, tol), "theta(0.1,1,3) = {t:?}");
    let t = layer_thresholds(0.0, 1.0, 3).map_err(|e| e.to_string())?;
    ensure!(close(t[1], 2.0 / 3.0, tol) && close(t[2], 4.0 / 9.0, tol), "theta(0,1,3) = {t:?}");
    ensure!(layer_thresholds(0.5, 0.5, 3).is_err(), "a >= b must be rejected");

    let mut e = Vec::new();
    for s in 1..=5 {
        e.push((0, s, 0.5));
    }
    let star = MatchGraph::from_similarities(6, &e).map_err(|e| e.to_string())?;
    let k = kernel(0, (0..6).collect(), 0);
    let (scores, best) = score_candidates(&star, &k, &[0, 1], 100.0, 1.0, ScoreScope::KernelSubgraph)
        .map_err(|e| e.to_string())?;
    ensure!(close(scores[0].delta, 56.0, tol) && close(scores[1].delta, 56.0, tol), "star scores {scores:?}");
    ensure!(best == 0, "star tie must pick the smallest id");

    let phi = msp_thresholds(0.0, 1.0, 4).map_err(|e| e.to_string())?;
    ensure!(phi == vec![0.25, 0.5, 0.75, 1.0], "phi(0,1,4) = {phi:?}");
    ensure!(msp_thresholds(0.3, 0.8, 1).map_err(|e| e.to_string())? == vec![0.8], "L = 1");
    let phi = msp_thresholds(0.2, 0.9, 7).map_err(|e| e.to_string())?;
    ensure!(close(phi[2], 0.5, tol), "phi_3 = {}", phi[2]);

    ensure!(target_count(300, 3, 20) == 5 && target_count(10, 3, 20) == 1 && target_count(0, 3, 20) == 0, "K_c");
    ensure!(auto_kernel_size(1000) == 70, "auto m");

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let a: f64 = rng.random_range(0.0..0.5);
        let b: f64 = rng.random_range(0.6..1.0);
        let t = layer_thresholds(a, b, 15).map_err(|e| e.to_string())?;
        ensure!(t.windows(2).all(|w| w[0] > w[1]), "theta not strictly decreasing for a={a}, b={b}");
        let p = msp_thresholds(1.0 - b, 1.0 - a, 15).map_err(|e| e.to_string())?;
        ensure!(p.windows(2).all(|w| w[0] < w[1]), "phi not strictly increasing");
    }
    Ok("similarity, thresholds, score, target count exact".into())
}

fn kernel_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = KernelConfig {
        m: 20,
        alpha: 1.5,
        layers: 15,
        epsilon: 0.1,
        floor: FloorMode::Relative,
    };
    let mut total = 0;
    for trial in 0..50 {
        let n = rng.random_range(100..=500);
        let (g, _) = planted_blobs(&mut rng, n);
        let ks = find_kernels(&g, &cfg).map_err(|e| e.to_string())?;
        let again = find_kernels(&g, &cfg).map_err(|e| e.to_string())?;
        ensure!(ks == again, "trial {trial}: not deterministic");
        let mut owner = vec![false; n];
        let global = g.mean_similarity().unwrap_or(0.0);
        for k in &ks {
            let size = k.members.len();
            ensure!(size >= 20 && size as f64 <= 30.0, "trial {trial}: kernel size {size}");
            for &v in &k.members {
                ensure!(!owner[v], "trial {trial}: image {v} in two kernels");
                owner[v] = true;
            }
            let inner = mean_internal_similarity(&g, &k.members).unwrap_or(0.0);
            ensure!(inner >= global, "trial {trial}: kernel mean {inner} < global mean {global}");
        }
        total += ks.len();
    }
    ensure!(total > 0, "no kernels found on any graph");
    Ok(format!("50 graphs, {total} kernels, all sized, disjoint, dense, deterministic"))
}

fn oracle_layer(phis: &[f64], b: f64) -> Option<usize> {
    phis.iter().position(|&p| b <= p).map(|t| t + 1)
}

fn msp_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let layers = 15;
    let mut checked = 0;
    for trial in 0..200 {
        let n = rng.random_range(8..=25);
        let ka = rng.random_range(2..=4);
        let kb = rng.random_range(2..=4);
        let a: Vec<usize> = (0..ka).collect();
        let b: Vec<usize> = (ka..ka + kb).collect();
        let mut edges = Vec::new();
        clique(&a, 0.7, 0.95, 1.0, &mut rng, &mut edges);
        clique(&b, 0.7, 0.95, 1.0, &mut rng, &mut edges);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.22) {
                    edges.push((i, j, rng.random_range(0.02..0.98)));
                }
            }
        }
        let g = MatchGraph::from_similarities(n, &dedup(edges)).map_err(|e| e.to_string())?;
        let ex = [a[rng.random_range(0..ka)], b[rng.random_range(0..kb)]];
        let ks = vec![kernel(0, a.clone(), ex[0]), kernel(1, b.clone(), ex[1])];
        let got = cluster_leaves(&g, &ks, &MspConfig { layers, range: None }).map_err(|e| e.to_string())?;

        let we = weighted_edges(&g);
        let (dmin, dmax) = we
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.2), hi.max(e.2)));
        let mut phis: Vec<f64> = (1..=layers)
            .map(|t| dmin + t as f64 * ((dmax - dmin) / layers as f64))
            .collect();
        phis[layers - 1] = dmax;

        for a_ in &got {
            let leaf = a_.leaf();
            let per: Vec<Option<usize>> = ex
                .iter()
                .map(|&x| minimax_bottleneck(n, &we, leaf, x).and_then(|bn| oracle_layer(&phis, bn)))
                .collect();
            let tmin = per.iter().flatten().min().copied();
            match (a_, tmin) {
                (ClusterAssignment::Unclustered { .. }, None) => {}
                (ClusterAssignment::Clustered { kernel, layer, path, .. }, Some(t)) => {
                    let fw = floyd_warshall(n, &we, phis[t - 1]);
                    let mut best: Option<(usize, f64)> = None;
                    for k in 0..2 {
                        if per[k] == Some(t) {
                            let len = fw[leaf][ex[k]];
                            if best.is_none_or(|(_, bl)| len < bl - 1e-12 * (1.0 + bl)) {
                                best = Some((k, len));
                            }
                        }
                    }
                    let (bk, blen) = best.expect("some kernel at layer t");
                    ensure!(*layer == t, "trial {trial} leaf {leaf}: layer {layer} vs oracle {t}");
                    ensure!(*kernel == bk, "trial {trial} leaf {leaf}: kernel {kernel} vs oracle {bk}");
                    ensure!(close(path.length, blen, 1e-9), "trial {trial} leaf {leaf}: length {} vs {blen}", path.length);
                    ensure!(path.target() == ex[bk] && path.vertices[0] == leaf, "trial {trial}: path endpoints");
                    for w in path.vertices.windows(2) {
                        let e = g.edge_between(w[0], w[1]);
                        ensure!(e.is_some_and(|e| e.d <= phis[t - 1]), "trial {trial}: invalid path step {w:?}");
                    }
                }
                (got, want) => return Err(format!("trial {trial} leaf {leaf}: got {got:?}, oracle layer {want:?}")),
            }
            checked += 1;
        }
    }
    Ok(format!("200 graphs, {checked} leaves, 100% agreement"))
}

fn rac_structure() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = RacConfig::default();
    let mut worst_ratio: f64 = 0.0;
    for trial in 0..25 {
        let m_leaves = rng.random_range(60..=600);
        let (g, k, leaves) = radial_instance(&mut rng, m_leaves);
        let out = rac_split(&g, &k, &leaves, 20, &cfg).map_err(|e| e.to_string())?;
        let active = m_leaves - out.quarantined.len();
        let want = if active == 0 { 0 } else { ((active as f64 / 60.0).round() as usize).max(1) };
        ensure!(out.clusters.len() == want, "trial {trial}: M={active}, {} clusters, want {want}", out.clusters.len());
        let mut seen = vec![false; g.num_images()];
        for c in &out.clusters {
            for &v in c {
                ensure!(!seen[v], "trial {trial}: leaf {v} in two clusters");
                seen[v] = true;
            }
            let mut with_kernel = k.members.clone();
            with_kernel.extend(c);
            ensure!(induces_connected(&g, &with_kernel), "trial {trial}: cluster not connected to kernel");
        }
        ensure!(out.clusters.iter().map(Vec::len).sum::<usize>() == active, "trial {trial}: coverage");
        let mean = active as f64 / out.clusters.len() as f64;
        let max = out.clusters.iter().map(Vec::len).max().unwrap_or(0) as f64;
        worst_ratio = worst_ratio.max(max / mean);
        ensure!(max <= 3.0 * mean, "trial {trial}: max {max} > 3 x mean {mean}");
        for s in &out.steps {
            ensure!(s.runner_up.is_none_or(|r| s.phi <= r), "trial {trial}: step {} not greedy", s.step);
        }
    }
    Ok(format!("25 radial instances, worst max/mean {worst_ratio:.2}"))
}

fn ring_run(seed: u64, pixel: f64, geom: f64) -> Result<(usize, f64, f64, f64, usize), String> {
    let gs = gen_scene(&SceneSpec {
        layout: Layout::Ring {
            cameras: 40,
            points: 2000,
        },
        pixel_noise: pixel,
        seed,
    })
    .map_err(|e| e.to_string())?;
    let g = gs.scene.match_graph(SimilarityMode::Union).map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        seed,
        geom_noise: geom,
        ..RunConfig::default()
    };
    let p = partition(&g, &cfg).map_err(|e| e.to_string())?;
    let out = simulate(&gs.scene, &p.tree, &cfg.sim_params(), None, 0.0).map_err(|e| e.to_string())?;
    let r = &out.report;
    let fm = r.final_models.first().ok_or("no final model")?;
    Ok((
        r.final_models.len(),
        fm.camera_rmse,
        fm.mean_reprojection_error.unwrap_or(f64::INFINITY),
        r.bbox_diagonal,
        fm.cameras.len(),
    ))
}

fn merge_accuracy() -> Check {
    let mut worst = (0.0f64, 0.0f64);
    for seed in 1..=3 {
        let (models, rmse, reproj, diag, cams) = ring_run(seed, 0.5, 0.005)?;
        ensure!(models == 1, "seed {seed}: {models} final models");
        ensure!(rmse <= 0.01 * diag, "seed {seed}: camera rmse {rmse} > {}", 0.01 * diag);
        ensure!(reproj <= 1.5, "seed {seed}: reprojection {reproj} px");
        ensure!(cams == 40, "seed {seed}: {cams} cameras in the final model");
        worst = (worst.0.max(rmse / diag), worst.1.max(reproj));
        let (models, _, reproj0, _, _) = ring_run(seed, 0.0, 0.0)?;
        ensure!(models == 1 && reproj0 <= 1e-6, "seed {seed}: zero-noise reprojection {reproj0}");
    }
    Ok(format!("3 seeds, worst rmse {:.4} x diag, worst reprojection {:.3} px", worst.0, worst.1))
}

/// Two models of one random cloud where the second model's single camera
/// sees `shared` tracks that are also in the first model.
fn gate_pair(shared: usize, rng: &mut ChaCha8Rng) -> (LocalModel, LocalModel) {
    let world: Vec<Vector3<f64>> = (0..200)
        .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let noise = Normal::new(0.0, 0.002).unwrap();
    let make = |label: &str, ids: &[usize], gauge: SimilarityTransform, rng: &mut ChaCha8Rng| {
        let points = ids
            .iter()
            .map(|&t| (t, gauge.apply(&(world[t] + Vector3::from_fn(|_, _| noise.sample(rng))))))
            .collect();
        LocalModel {
            label: label.into(),
            cameras: [(0, ModelCamera { rotation: UnitQuaternion::identity(), center: gauge.apply(&Vector3::new(0.0, 0.0, -5.0)) })]
                .into_iter()
                .collect(),
            points,
            tracks: [(0, ids.iter().copied().collect())].into_iter().collect(),
            gauge,
            mergeable: true,
        }
    };
    let g1 = SimilarityTransform::random(rng);
    let g2 = SimilarityTransform::random(rng);
    let first: Vec<usize> = (0..150).collect();
    let second: Vec<usize> = (150 - shared..150).chain(150..200).collect();
    let mut m1 = make("a", &first, g1, rng);
    m1.tracks.insert(0, first.iter().copied().collect());
    let m2 = make("b", &second, g2, rng);
    (m1, m2)
}

fn tau_gate() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ransac = RansacParams::default();
    for trial in 0..20 {
        let (m1, m2) = gate_pair(10, &mut rng);
        match merge_models(&m1, &m2, 12, &ransac, &mut rng) {
            Err(MergeRefusal::InsufficientOverlap { shared: 10, .. }) => {}
            other => return Err(format!("trial {trial}: 10 shared tracks not refused: {:?}", other.map(|o| o.1))),
        }
    }
    let mut rejected = 0;
    for trial in 0..20 {
        let (m1, mut m2) = gate_pair(30, &mut rng);
        // corrupt only the shared tracks of the second model
        let mut shared_only = m2.clone();
        shared_only.points.retain(|t, _| m1.points.contains_key(t));
        let sep = 0.5 * m2.gauge.scale;
        let bad = corrupt_track_ids(&mut shared_only, 0.2, sep, &mut rng);
        ensure!(bad.len() == 6, "trial {trial}: {} corrupted", bad.len());
        for t in &bad {
            m2.points.insert(*t, shared_only.points[t]);
        }
        let (_, info) = merge_models(&m1, &m2, 12, &ransac, &mut rng)
            .map_err(|e| format!("trial {trial}: 30 shared tracks refused: {e}"))?;
        ensure!(info.shared == 30, "trial {trial}: shared {}", info.shared);
        for t in &bad {
            ensure!(info.outliers.contains(t), "trial {trial}: corrupted track {t} accepted");
        }
        rejected += bad.len();
    }
    Ok(format!("10 shared refused 20/20; 30 shared with 20% corrupted merged 20/20, {rejected} corrupted rejected"))
}

fn two_building() -> Check {
    let run = |bridges: usize| -> Result<_, String> {
        let gs = gen_scene(&SceneSpec {
            layout: Layout::TwoBuilding { bridge_cameras: bridges },
            pixel_noise: 0.5,
            seed: 8,
        })
        .map_err(|e| e.to_string())?;
        let g = gs.scene.match_graph(SimilarityMode::Union).map_err(|e| e.to_string())?;
        let cfg = RunConfig::default();
        let p = partition(&g, &cfg).map_err(|e| e.to_string())?;
        Ok((gs, g, p, cfg))
    };
    let (gs, _, p, cfg) = run(0)?;
    ensure!(p.kernels.len() == 2, "disconnected layout: {} kernels", p.kernels.len());
    let out = simulate(&gs.scene, &p.tree, &cfg.sim_params(), None, 0.0).map_err(|e| e.to_string())?;
    let r = &out.report;
    ensure!(r.final_models.len() == 2, "disconnected layout: {} final models", r.final_models.len());
    ensure!(
        r.merges.iter().any(|m| m.stage == MergeStage::Global && !m.accepted),
        "no refused global merge recorded"
    );
    for fm in &r.final_models {
        let first = fm.cameras.iter().filter(|&&c| c < 22).count();
        ensure!(first == 0 || first == fm.cameras.len(), "model {} spans both buildings", fm.label);
    }

    let (gs, g, p, _) = run(5)?;
    ensure!(tmr::matchgraph::connected_components(&g, |_| true).len() == 1, "bridge layout is disconnected");
    let max_bridge = g
        .edges()
        .iter()
        .filter(|e| (22..27).contains(&e.i) != (22..27).contains(&e.j))
        .map(|e| e.s)
        .fold(0.0, f64::max);
    ensure!(max_bridge < 0.1, "bridge-to-building similarity {max_bridge}");
    ensure!(p.kernels.len() == 2, "bridge layout: {} kernels", p.kernels.len());
    for (k, dense) in p.kernels.iter().zip(&gs.dense_sets) {
        ensure!(k.members.iter().all(|v| dense.contains(v)), "kernel {} leaves its dense set", k.id);
    }
    Ok(format!("0 bridges: 2 kernels, 2 models, merge refused; 5 bridges: max bridge s {max_bridge:.3}, kernels inside dense sets"))
}

fn speedup_model() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut edges = Vec::new();
    for b in 0..6 {
        let base = b * 100;
        let blob: Vec<usize> = (base..base + 80).collect();
        clique(&blob, 0.6, 0.85, 1.0, &mut rng, &mut edges);
        for l in 0..20 {
            let leaf = base + 80 + l;
            edges.push((base + l, leaf, rng.random_range(0.2..0.35)));
            edges.push((base + (l + 7) % 80, leaf, rng.random_range(0.2..0.35)));
        }
        let next = ((b + 1) % 6) * 100;
        edges.push((base.min(next + 1), base.max(next + 1), 0.03));
    }
    let g = MatchGraph::from_similarities(600, &dedup(edges)).map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        m: KernelSize::Auto,
        ..RunConfig::default()
    };
    let p = partition(&g, &cfg).map_err(|e| e.to_string())?;
    let m = p.m as f64;
    let max_leaf = p.tree.leaf_clusters.iter().map(|c| c.members.len()).max().unwrap_or(0) as f64;
    let unlimited = plan_schedule(&p.tree, Workers::Unlimited, 0.0).map_err(|e| e.to_string())?;
    ensure!(p.kernels.len() == 6, "{} kernels", p.kernels.len());
    ensure!(unlimited.respects_dependencies(), "dependency violated");
    ensure!(
        unlimited.makespan <= 1.5 * m + max_leaf,
        "makespan {} > alpha*m + max leaf cluster = {}",
        unlimited.makespan,
        1.5 * m + max_leaf
    );
    ensure!(unlimited.speedup >= 4.0, "speedup {:.2}", unlimited.speedup);
    let mut last = f64::INFINITY;
    let mut spans = Vec::new();
    for w in [Workers::Limited(1), Workers::Limited(2), Workers::Limited(4), Workers::Limited(8), Workers::Unlimited] {
        let plan = plan_schedule(&p.tree, w, 0.0).map_err(|e| e.to_string())?;
        ensure!(plan.makespan <= last, "makespan increased at {w}: {} > {last}", plan.makespan);
        last = plan.makespan;
        spans.push(plan.makespan);
    }
    Ok(format!("m = {}, makespans {spans:?}, speedup {:.2}", p.m, unlimited.speedup))
}

fn umeyama_accuracy() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..100 {
        let t = SimilarityTransform::random(&mut rng);
        let src: Vec<Vector3<f64>> = (0..30).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let dst: Vec<_> = src.iter().map(|p| t.apply(p)).collect();
        let fit = umeyama(&src, &dst, None).map_err(|e| e.to_string())?.transform;
        ensure!((fit.scale - t.scale).abs() <= 1e-9 * t.scale.max(1.0), "trial {trial}: scale");
        ensure!(fit.rotation.angle_to(&t.rotation) <= 1e-7, "trial {trial}: rotation");
    }
    let sigma = 0.01;
    let noise = Normal::new(0.0, sigma).unwrap();
    let (mut ws, mut wr, mut wt) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..100 {
        let t = SimilarityTransform::random(&mut rng);
        let src: Vec<Vector3<f64>> = (0..50).map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let dst: Vec<_> = src
            .iter()
            .map(|p| t.apply(p) + Vector3::from_fn(|_, _| noise.sample(&mut rng)))
            .collect();
        let fit = umeyama(&src, &dst, None).map_err(|e| e.to_string())?.transform;
        let se = (fit.scale - t.scale).abs() / t.scale;
        let re = fit.rotation.angle_to(&t.rotation).to_degrees();
        let te = (fit.translation - t.translation).norm();
        ensure!(se <= 0.01, "trial {trial}: scale error {se}");
        ensure!(re <= 1.0, "trial {trial}: rotation error {re} deg");
        ensure!(te <= 2.0 * sigma, "trial {trial}: translation error {te}");
        ws = ws.max(se);
        wr = wr.max(re);
        wt = wt.max(te);
    }
    Ok(format!("exact on 100 transforms; noisy worst scale {ws:.2e}, rotation {wr:.3} deg, translation {wt:.4}"))
}

fn main() {
    let criteria: Vec<(&str, &str, Duration, fn() -> Check)> = vec![
        ("1", "formula unit suite", Duration::from_secs(1), formula_suite),
        ("2", "kernel properties on random graphs", Duration::from_secs(30), kernel_properties),
        ("3", "shortest-path clustering matches oracle", Duration::from_secs(60), msp_oracle),
        ("4", "leaf cluster structure", Duration::from_secs(60), rac_structure),
        ("5", "merge accuracy on ring scene", Duration::from_secs(120), merge_accuracy),
        ("6", "overlap gate and outlier rejection", Duration::from_secs(30), tau_gate),
        ("7", "two-building layouts", Duration::from_secs(60), two_building),
        ("8", "speedup model", Duration::from_secs(10), speedup_model),
        ("9", "similarity estimation", Duration::from_secs(10), umeyama_accuracy),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == id) {
            continue;
        }
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let took = start.elapsed();
        let res = match res {
            Ok(msg) if took > budget => Err(format!("{msg}; exceeded budget")),
            other => other,
        };
        let (tag, msg) = match &res {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!("[{tag}] {id}. {name}: {msg} ({:.2}s of {}s)", took.as_secs_f64(), budget.as_secs());
        if res.is_err() {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
