use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tmr::config::{KernelSize, RunConfig};
use tmr::kernels::FloorMode;
use tmr::matchgraph::{build_graph_with, connected_components, parse_match_file, GraphError, MatchGraph, SimilarityMode};
use tmr::pipeline::{partition, PipelineError};
use tmr::reconsim::{gen_scene, simulate, Layout, Scene, SceneError, SceneSpec, SimError};
use tmr::schedule::{plan_schedule, Workers};
use tmr::tree::{TmrTree, TreeError};

#[derive(Parser)]
#[command(name = "tmr", version, about = "Partition an image matching graph into a three-layer reconstruction tree")]
struct Cli {
    /// TOML file with run parameters; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and its match graph.
    GenScene(GenArgs),
    /// Build the reconstruction tree of a match graph.
    Partition(PartitionArgs),
    /// Run the simulated two-stage reconstruction of a tree on a scene.
    Simulate(SimulateArgs),
    /// Print match graph statistics.
    Stats {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum)]
        similarity: Option<Similarity>,
    },
    /// Write a match graph or a tree's schedule DAG as DOT.
    ExportDot(DotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutKind {
    Ring,
    TwoBuilding,
}

#[derive(Clone, Copy, ValueEnum)]
enum Similarity {
    Union,
    Max,
}

impl From<Similarity> for SimilarityMode {
    fn from(s: Similarity) -> Self {
        match s {
            Similarity::Union => SimilarityMode::Union,
            Similarity::Max => SimilarityMode::Max,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Floor {
    Relative,
    Absolute,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "ring")]
    layout: LayoutKind,
    #[arg(long, default_value_t = 40)]
    cameras: usize,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    /// Bridge cameras between the two buildings.
    #[arg(long, default_value_t = 0)]
    bridges: usize,
    /// Pixel noise standard deviation per axis.
    #[arg(long, default_value_t = 0.5)]
    pixel_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    scene_out: PathBuf,
    #[arg(long)]
    graph_out: PathBuf,
}

/// Parameter overrides; unset flags fall back to the config file, then defaults.
#[derive(Args, Default)]
struct Params {
    /// Minimum kernel size or `auto`.
    #[arg(long)]
    m: Option<KernelSize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Kernel search layers.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum)]
    floor: Option<Floor>,
    #[arg(long, value_enum)]
    similarity: Option<Similarity>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    /// Shortest-path layers.
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    sigma1: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    sigma3: Option<f64>,
    #[arg(long)]
    sigma4: Option<f64>,
    /// Use unnormalized agglomeration terms.
    #[arg(long)]
    rac_raw_terms: bool,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    merge_cost: Option<f64>,
    #[arg(long)]
    geom_noise: Option<f64>,
    #[arg(long)]
    corrupt_fraction: Option<f64>,
    #[arg(long)]
    ransac_iterations: Option<usize>,
    #[arg(long)]
    ransac_threshold: Option<f64>,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    tree_out: PathBuf,
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Merge log of the leaf agglomeration as CSV.
    #[arg(long)]
    dendrogram: Option<PathBuf>,
    /// Include exemplar score tables in the report.
    #[arg(long)]
    scores: bool,
    #[command(flatten)]
    params: Params,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[command(flatten)]
    params: Params,
}

#[derive(Args)]
struct DotArgs {
    #[arg(long, conflicts_with = "tree", required_unless_present = "tree")]
    graph: Option<PathBuf>,
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Parse(String),
    Invariant(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Parse(_) => 2,
            Failure::Invariant(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Parse(m) | Failure::Invariant(m) => m,
        }
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        Failure::Invariant(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Invariant(e.to_string())
    }
}

impl From<TreeError> for Failure {
    fn from(e: TreeError) -> Self {
        match e {
            TreeError::Format(_) => Failure::Parse(e.to_string()),
            _ => Failure::Invariant(e.to_string()),
        }
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Parse { .. } => Failure::Parse(e.to_string()),
            SceneError::BadSpec(_) => Failure::Usage(e.to_string()),
            SceneError::Graph(_) => Failure::Invariant(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::BadParams(_) => Failure::Usage(e.to_string()),
            _ => Failure::Invariant(e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn load_graph(path: &Path, mode: SimilarityMode) -> Result<MatchGraph, Failure> {
    let text = read(path)?;
    let (stats, matches) =
        parse_match_file(&text).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    Ok(build_graph_with(&stats, &matches, mode)?)
}

fn resolve_config(path: Option<&Path>, p: &Params) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(path) => RunConfig::from_toml_str(&read(path)?).map_err(|e| match e {
            tmr::config::ConfigError::Invalid(m) => Failure::Usage(m),
            other => Failure::Parse(format!("{}: {other}", path.display())),
        })?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => {$( if let Some(v) = p.$f { cfg.$f = v; } )*};
    }
    set!(m, alpha, k, epsilon, beta1, beta2, l, r, sigma1, sigma2, sigma3, sigma4, tau, seed, merge_cost, geom_noise, corrupt_fraction, ransac_iterations, ransac_threshold);
    if let Some(w) = p.workers {
        cfg.workers = Some(w);
    }
    if let Some(f) = p.floor {
        cfg.floor = match f {
            Floor::Relative => FloorMode::Relative,
            Floor::Absolute => FloorMode::Absolute,
        };
    }
    if let Some(s) = p.similarity {
        cfg.similarity = s.into();
    }
    if p.rac_raw_terms {
        cfg.rac_raw_terms = true;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::GenScene(a) => {
            let layout = match a.layout {
                LayoutKind::Ring => Layout::Ring {
                    cameras: a.cameras,
                    points: a.points,
                },
                LayoutKind::TwoBuilding => Layout::TwoBuilding { bridge_cameras: a.bridges },
            };
            let gs = gen_scene(&SceneSpec {
                layout,
                pixel_noise: a.pixel_noise,
                seed: a.seed,
            })?;
            let g = gs.scene.match_graph(SimilarityMode::Union)?;
            write(&a.scene_out, &gs.scene.to_text())?;
            write(&a.graph_out, &g.to_text())?;
            println!(
                "scene: {} cameras, {} points, {} observations ({} points dropped)",
                gs.scene.cameras.len(),
                gs.scene.points.len(),
                gs.scene.observations.len(),
                gs.dropped_points
            );
            println!("graph: {} edges, {} components", g.edges().len(), connected_components(&g, |_| true).len());
            for (i, d) in gs.dense_sets.iter().enumerate() {
                println!("dense set {i}: {d:?}");
            }
        }
        Command::Partition(a) => {
            let cfg = resolve_config(config, &a.params)?;
            let g = load_graph(&a.graph, cfg.similarity)?;
            let p = partition(&g, &cfg)?;
            let report = p.report(&g, &cfg, a.scores)?;
            write(&a.tree_out, &(p.tree.to_json() + "\n"))?;
            if let Some(path) = &a.report_out {
                write(path, &to_json(&report))?;
            }
            if let Some(path) = &a.dendrogram {
                write(path, &p.dendrogram_csv())?;
            }
            let s = p.tree.summary();
            println!(
                "{} images, m = {}: {} kernels, {} leaf clusters, {} unclustered",
                s.num_images, report.m, s.kernels, s.leaf_clusters, s.unclustered
            );
            for k in &report.kernels {
                println!(
                    "  kernel {}: {} images, exemplar {:?}, {} leaves in {} leaf clusters",
                    k.id, k.size, k.exemplar, k.leaves, k.leaf_clusters
                );
            }
            println!(
                "schedule ({} workers): makespan {}, serial {}, speedup {:.2}",
                report.schedule.workers, report.schedule.makespan, report.schedule.serial, report.schedule.speedup
            );
        }
        Command::Simulate(a) => {
            let cfg = resolve_config(config, &a.params)?;
            let scene = Scene::parse(&read(&a.scene)?).map_err(|e| Failure::Parse(format!("{}: {e}", a.scene.display())))?;
            let tree = TmrTree::from_json(&read(&a.tree)?)?;
            let out = simulate(&scene, &tree, &cfg.sim_params(), cfg.workers, cfg.merge_cost)?;
            let r = &out.report;
            if let Some(path) = &a.report_out {
                write(path, &to_json(r))?;
            }
            println!("{} node models, {} final models", r.nodes.len(), r.final_models.len());
            for m in &r.final_models {
                println!(
                    "  {}: {} cameras, {} points, reprojection {:.4} px, camera rmse {:.6}",
                    m.label,
                    m.cameras.len(),
                    m.points,
                    m.mean_reprojection_error.unwrap_or(f64::NAN),
                    m.camera_rmse
                );
            }
            let refused = r.merges.iter().filter(|m| !m.accepted).count();
            println!("merges: {} accepted, {refused} refused", r.merges.len() - refused);
            println!(
                "schedule ({} workers): makespan {}, speedup {:.2}",
                r.schedule.workers, r.schedule.makespan, r.schedule.speedup
            );
        }
        Command::Stats { graph, similarity } => {
            let mode = match similarity {
                Some(s) => s.into(),
                None => resolve_config(config, &Params::default())?.similarity,
            };
            let g = load_graph(&graph, mode)?;
            let degrees: Vec<usize> = (0..g.num_images()).map(|v| g.degree(v)).collect();
            println!("images: {}", g.num_images());
            println!("edges: {}", g.edges().len());
            println!("components: {}", connected_components(&g, |_| true).len());
            println!("isolated: {}", g.isolated().len());
            println!(
                "degree: min {} max {} mean {:.3}",
                degrees.iter().min().unwrap_or(&0),
                degrees.iter().max().unwrap_or(&0),
                degrees.iter().sum::<usize>() as f64 / degrees.len().max(1) as f64
            );
            if let Some(ms) = g.mean_similarity() {
                println!("mean similarity: {ms:.6}");
            }
            if let Some((lo, hi)) = g.difference_range() {
                println!("difference range: [{lo:.6}, {hi:.6}]");
            }
            println!("warnings: {}", g.warnings().len());
        }
        Command::ExportDot(a) => {
            let dot = if let Some(path) = &a.graph {
                let mode = resolve_config(config, &Params::default())?.similarity;
                load_graph(path, mode)?.to_dot()
            } else {
                let path = a.tree.as_ref().expect("clap enforces one input");
                let tree = TmrTree::from_json(&read(path)?)?;
                let workers = match a.workers {
                    Some(0) => return Err(Failure::Usage("workers must be >= 1".into())),
                    Some(w) => Workers::Limited(w),
                    None => Workers::Unlimited,
                };
                plan_schedule(&tree, workers, 0.0)
                    .map_err(|e| Failure::Usage(e.to_string()))?
                    .to_dot()
            };
            match &a.out {
                Some(path) => write(path, &dot)?,
                None => print!("{dot}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
