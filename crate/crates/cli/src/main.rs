//! `embcap`: batch entry points for scene generation, annotation, baselines,
//! evaluation and the environment server.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use embcap_core::baselines::{caption_trajectory, random_navigate, rule_navigate, TemplateBank};
use embcap_core::baselines::captioner::DEFAULT_CONFIDENCE;
use embcap_core::dataset::{
    annotate_scene, load_json, make_dataset, save_json, AnnotationRecord, DatasetConfig, SceneRecord,
    TrajectoryRecord,
};
use embcap_core::envserver::{spawn_server, ServerConfig, World};
use embcap_core::geometry::world_to_grid;
use embcap_core::gridworld::{Action, NavSpace, DEFAULT_MAX_STEPS, MAX_MOVE};
use embcap_core::metrics::cap::{score_corpus, CapScores};
use embcap_core::metrics::nav::{
    path_length, step_scores, trajectory_scores, Embedder, ExternalEmbeddings, GoodSet, NavScores,
    SemanticProfileEmbedder, StepScore, View,
};
use embcap_core::oracle::{gen_ground_truth, look_at_center, Candidate};
use embcap_core::render::{detect, render, seg_stats};
use embcap_core::{generate_scene, CameraIntrinsics, GridIndex, Pose, Scene, Vec3};

#[derive(Debug, Parser)]
#[command(name = "embcap", version, about = "Embodied captioning simulator and evaluation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate scenes from consecutive seeds.
    GenScenes(GenScenesArgs),
    /// Pick good viewpoints and template reference captions for every scene.
    Annotate(AnnotateArgs),
    /// Plan ground-truth trajectories to the annotated good viewpoints.
    GenTrajectories(GenTrajectoriesArgs),
    /// Generate a complete dataset with train/val/test splits.
    MakeDataset(MakeDatasetArgs),
    /// Run a baseline navigator and captioner from every ground-truth start.
    RunBaseline(RunBaselineArgs),
    /// Score navigation episodes against the good viewpoints.
    EvalNav(EvalNavArgs),
    /// Score episode captions against the reference captions.
    EvalCap(EvalCapArgs),
    /// Render one view of a scene to PNG.
    Render(RenderArgs),
    /// Per-direction action histograms.
    Stats(StatsArgs),
    /// Serve episodes over newline-delimited JSON on TCP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
struct CameraArgs {
    /// Image width in pixels.
    #[arg(long, default_value_t = 128)]
    width: u32,
    /// Image height in pixels.
    #[arg(long, default_value_t = 128)]
    height: u32,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 60.0)]
    fov_deg: f64,
}

impl CameraArgs {
    fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.width, self.height, self.fov_deg.to_radians()).map_err(|e| anyhow!("camera: {e}"))
    }
}

#[derive(Debug, Args, Serialize)]
struct GenScenesArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Catalog JSON; the built-in catalog otherwise.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct AnnotateArgs {
    /// Directory holding scenes/; annotations/ is written next to it.
    #[arg(long)]
    #[serde(skip)]
    dataset: PathBuf,
    #[arg(long, default_value_t = embcap_core::oracle::DEFAULT_CANDIDATES)]
    candidates: usize,
    #[arg(long, default_value_t = embcap_core::oracle::DEFAULT_GOOD_VIEWPOINTS)]
    good_viewpoints: usize,
    #[arg(long, default_value_t = 3)]
    captions: usize,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Debug, Args, Serialize)]
struct GenTrajectoriesArgs {
    /// Directory holding scenes/ and annotations/.
    #[arg(long)]
    #[serde(skip)]
    dataset: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = embcap_core::oracle::DEFAULT_STARTS_PER_VIEWPOINT)]
    starts_per_viewpoint: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
}

#[derive(Debug, Args, Serialize)]
struct MakeDatasetArgs {
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    train: usize,
    #[arg(long, default_value_t = 10)]
    val: usize,
    #[arg(long, default_value_t = 10)]
    test: usize,
    #[arg(long, default_value_t = 3)]
    held_out_categories: usize,
    #[arg(long, default_value_t = embcap_core::oracle::DEFAULT_CANDIDATES)]
    candidates: usize,
    #[arg(long, default_value_t = embcap_core::oracle::DEFAULT_GOOD_VIEWPOINTS)]
    good_viewpoints: usize,
    #[arg(long, default_value_t = embcap_core::oracle::DEFAULT_STARTS_PER_VIEWPOINT)]
    starts_per_viewpoint: usize,
    #[arg(long, default_value_t = 3)]
    captions: usize,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum NavKind {
    Rule,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum CapKind {
    Template,
}

#[derive(Debug, Args, Serialize)]
struct RunBaselineArgs {
    #[arg(long)]
    #[serde(skip)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    nav: NavKind,
    #[arg(long, value_enum, default_value = "template")]
    cap: CapKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Only scenes whose split label starts with this prefix.
    #[arg(long)]
    split: Option<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Debug, Args, Serialize)]
struct EvalNavArgs {
    #[arg(long)]
    #[serde(skip)]
    dataset: PathBuf,
    /// Episodes written by run-baseline (or any tool using the same schema).
    #[arg(long, conflicts_with = "ground_truth", required_unless_present = "ground_truth")]
    predictions: Option<PathBuf>,
    /// Evaluate the ground-truth trajectories themselves.
    #[arg(long)]
    ground_truth: bool,
    /// JSON object of frame id -> embedding; the built-in embedder otherwise.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Debug, Args, Serialize)]
struct EvalCapArgs {
    #[arg(long)]
    #[serde(skip)]
    dataset: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct RenderArgs {
    /// Scene record JSON.
    #[arg(long)]
    scene: PathBuf,
    /// Camera pose as x,y,z,heading,elevation (metres, radians).
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    pose: Option<String>,
    /// Lattice point i,j,k; the camera looks at the scene center.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Debug, Args, Serialize)]
struct StatsArgs {
    /// Dataset directory; its ground-truth trajectories are counted.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    #[serde(skip)]
    dataset: Option<PathBuf>,
    /// Episodes file to count instead.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Also write an SVG bar chart.
    #[arg(long)]
    svg: bool,
    #[arg(long, default_value_t = 8)]
    bins: usize,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    privileged: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
    #[command(flatten)]
    camera: CameraArgs,
}

/// One navigation episode, predicted or ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Episode {
    trajectory_id: String,
    scene_id: String,
    start: Pose,
    /// Every pose visited, start first.
    poses: Vec<Pose>,
    actions: Vec<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caption: Option<String>,
}

impl Episode {
    fn from_record(t: &TrajectoryRecord) -> Self {
        Self {
            trajectory_id: t.trajectory_id.clone(),
            scene_id: t.scene_id.clone(),
            start: t.start,
            poses: t.poses.clone(),
            actions: t.actions.clone(),
            caption: None,
        }
    }
}

/// Scenes of a dataset directory with whatever records exist for them.
struct SceneData {
    scene: Scene,
    annotation: Option<AnnotationRecord>,
    trajectories: Vec<TrajectoryRecord>,
    split: Option<String>,
}

fn load_dir(dir: &Path) -> Result<BTreeMap<String, SceneData>> {
    let scenes_dir = dir.join("scenes");
    let mut paths: Vec<PathBuf> = fs::read_dir(&scenes_dir)
        .with_context(|| format!("reading {}", scenes_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let splits: BTreeMap<String, String> = match dir.join("splits.json") {
        p if p.exists() => load_json(&p)?,
        _ => BTreeMap::new(),
    };
    let loaded = paths
        .par_iter()
        .map(|p| -> Result<(String, SceneData)> {
            let rec: SceneRecord = load_json(p)?;
            let id = rec.scene.scene_id.clone();
            let ann = dir.join("annotations").join(format!("{id}.json"));
            let annotation = if ann.exists() { Some(load_json(&ann)?) } else { None };
            let tp = dir.join("trajectories").join(format!("{id}.json"));
            let trajectories = if tp.exists() { load_json(&tp)? } else { Vec::new() };
            let split = splits.get(&id).cloned();
            Ok((id, SceneData { scene: rec.scene, annotation, trajectories, split }))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    if loaded.is_empty() {
        bail!("no scenes in {}", scenes_dir.display());
    }
    Ok(loaded)
}

fn keep_split(data: &SceneData, split: &Option<String>) -> bool {
    match split {
        None => true,
        Some(prefix) => data.split.as_deref().is_some_and(|s| s.starts_with(prefix.as_str())),
    }
}

fn load_catalog(path: &Option<PathBuf>) -> Result<embcap_core::Catalog> {
    match path {
        None => Ok(embcap_core::Catalog::builtin()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(embcap_core::Catalog::from_json(&text)?)
        }
    }
}

fn write_manifest<T: Serialize>(dir: &Path, command: &str, args: &T) -> Result<()> {
    let manifest = json!({
        "tool": "embcap",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": args,
    });
    save_json(&manifest, &dir.join("manifests").join(format!("{command}.json")))?;
    Ok(())
}

fn gen_scenes(a: &GenScenesArgs) -> Result<()> {
    let catalog = load_catalog(&a.catalog)?;
    let version = catalog.version();
    (0..a.count as u64).into_par_iter().try_for_each(|n| -> Result<()> {
        let seed = a.seed + n;
        let scene = generate_scene(seed, &catalog).with_context(|| format!("scene seed {seed}"))?;
        let path = a.out.join("scenes").join(format!("{}.json", scene.scene_id));
        save_json(&SceneRecord { catalog_version: version.clone(), scene }, &path)?;
        Ok(())
    })?;
    write_manifest(&a.out, "gen-scenes", a)?;
    log::info!("wrote {} scenes", a.count);
    Ok(())
}

fn annotate(a: &AnnotateArgs) -> Result<()> {
    let data = load_dir(&a.dataset)?;
    let config = DatasetConfig {
        candidates: a.candidates,
        good_viewpoints: a.good_viewpoints,
        captions_per_scene: a.captions,
        camera: a.camera.intrinsics()?,
        ..DatasetConfig::default()
    };
    let bank = TemplateBank::builtin();
    data.par_iter().try_for_each(|(id, d)| -> Result<()> {
        let bundle = annotate_scene(&d.scene, "", &config, &bank).with_context(|| format!("annotating {id}"))?;
        save_json(&bundle.annotation, &a.dataset.join("annotations").join(format!("{id}.json")))?;
        Ok(())
    })?;
    write_manifest(&a.dataset, "annotate", a)
}

fn gen_trajectories(a: &GenTrajectoriesArgs) -> Result<()> {
    let data = load_dir(&a.dataset)?;
    data.par_iter().try_for_each(|(id, d)| -> Result<()> {
        let ann = d.annotation.as_ref().ok_or_else(|| anyhow!("{id}: not annotated, run annotate first"))?;
        let nav = NavSpace::new(&d.scene);
        let good = ann
            .good_viewpoints
            .iter()
            .map(|g| {
                Ok(Candidate {
                    grid: world_to_grid(g.pose.position).map_err(|e| anyhow!("{id}: {e}"))?,
                    pose: g.pose,
                    score: g.score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        rng.set_stream(d.scene.seed);
        let trajs = gen_ground_truth(&nav, &good, &mut rng, a.starts_per_viewpoint, a.max_steps)
            .with_context(|| format!("planning {id}"))?;
        let per = a.starts_per_viewpoint.max(1);
        let records: Vec<TrajectoryRecord> = trajs
            .iter()
            .enumerate()
            .map(|(n, t)| TrajectoryRecord::from_trajectory(id, n / per, n % per, t))
            .collect();
        save_json(&records, &a.dataset.join("trajectories").join(format!("{id}.json")))?;
        Ok(())
    })?;
    write_manifest(&a.dataset, "gen-trajectories", a)
}

fn make_dataset_cmd(a: &MakeDatasetArgs) -> Result<()> {
    let catalog = load_catalog(&a.catalog)?;
    let config = DatasetConfig {
        first_seed: a.seed,
        train: a.train,
        val: a.val,
        test: a.test,
        held_out_categories: a.held_out_categories,
        candidates: a.candidates,
        good_viewpoints: a.good_viewpoints,
        starts_per_viewpoint: a.starts_per_viewpoint,
        captions_per_scene: a.captions,
        camera: a.camera.intrinsics()?,
    };
    let manifest = make_dataset(&a.out, &catalog, &config)?;
    write_manifest(&a.out, "make-dataset", a)?;
    println!("{} scenes written to {}", manifest.scenes.len(), a.out.display());
    Ok(())
}

fn run_baseline(a: &RunBaselineArgs) -> Result<()> {
    let data = load_dir(&a.dataset)?;
    let cam = a.camera.intrinsics()?;
    let bank = TemplateBank::builtin();
    let jobs: Vec<(&SceneData, &TrajectoryRecord)> = data
        .values()
        .filter(|d| keep_split(d, &a.split))
        .flat_map(|d| d.trajectories.iter().map(move |t| (d, t)))
        .collect();
    if jobs.is_empty() {
        bail!("no ground-truth trajectories to start from in {}", a.dataset.display());
    }
    let episodes: Vec<Episode> = jobs
        .par_iter()
        .enumerate()
        .map(|(n, (d, t))| {
            let scene = &d.scene;
            let nav = NavSpace::new(scene);
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            rng.set_stream(n as u64);
            let state = match a.nav {
                NavKind::Rule => rule_navigate(scene, &nav, t.start, &cam, a.max_steps),
                NavKind::Random => random_navigate(&nav, t.start, a.max_steps, &mut rng),
            };
            let views: Vec<_> = state.pose_history.iter().map(|p| (*p, detect(scene, p, &cam))).collect();
            let caption = match a.cap {
                CapKind::Template => caption_trajectory(scene, &views, &bank, DEFAULT_CONFIDENCE, &mut rng),
            };
            Episode {
                trajectory_id: t.trajectory_id.clone(),
                scene_id: t.scene_id.clone(),
                start: t.start,
                poses: state.pose_history,
                actions: state.action_history,
                caption: Some(caption),
            }
        })
        .collect();
    save_json(&episodes, &a.out.join("predictions.json"))?;
    write_manifest(&a.out, "run-baseline", a)?;
    println!("{} episodes written to {}", episodes.len(), a.out.join("predictions.json").display());
    Ok(())
}

fn load_episodes(path: &Path) -> Result<Vec<Episode>> {
    Ok(load_json(path)?)
}

fn ground_truth_index(data: &BTreeMap<String, SceneData>) -> BTreeMap<&str, &TrajectoryRecord> {
    data.values()
        .flat_map(|d| d.trajectories.iter())
        .map(|t| (t.trajectory_id.as_str(), t))
        .collect()
}

#[derive(Debug, Serialize)]
struct NavEpisodeReport {
    trajectory_id: String,
    scene_id: String,
    scores: NavScores,
    steps: Vec<StepScore>,
}

fn eval_nav(a: &EvalNavArgs) -> Result<()> {
    let data = load_dir(&a.dataset)?;
    let cam = a.camera.intrinsics()?;
    let embedder: Box<dyn Embedder> = match &a.embeddings {
        Some(p) => Box::new(ExternalEmbeddings::load(p)?),
        None => Box::new(SemanticProfileEmbedder::from_catalog(&load_catalog(&a.catalog)?)),
    };
    let gt = ground_truth_index(&data);
    let episodes: Vec<Episode> = match &a.predictions {
        Some(p) => load_episodes(p)?,
        None => gt.values().map(|t| Episode::from_record(t)).collect(),
    };
    let episodes: Vec<Episode> = episodes
        .into_iter()
        .filter(|e| data.get(&e.scene_id).map_or(true, |d| keep_split(d, &a.split)))
        .collect();
    if episodes.is_empty() {
        bail!("no episodes to evaluate");
    }
    let reports = episodes
        .par_iter()
        .map(|e| -> Result<NavEpisodeReport> {
            let d = data.get(&e.scene_id).ok_or_else(|| anyhow!("{}: unknown scene {}", e.trajectory_id, e.scene_id))?;
            let ann = d.annotation.as_ref().ok_or_else(|| anyhow!("{}: scene not annotated", e.scene_id))?;
            let reference = gt
                .get(e.trajectory_id.as_str())
                .ok_or_else(|| anyhow!("{}: no ground-truth trajectory", e.trajectory_id))?;
            let good_frames: Vec<_> = ann.good_viewpoints.iter().map(|g| render(&d.scene, &g.pose, &cam)).collect();
            let good_views: Vec<View> = ann
                .good_viewpoints
                .iter()
                .zip(&good_frames)
                .map(|(g, f)| View { id: &g.frame_id, frame: f })
                .collect();
            let good = GoodSet::new(&good_views, embedder.as_ref())?;
            let frames: Vec<_> = e.poses.iter().map(|p| render(&d.scene, p, &cam)).collect();
            let ids: Vec<String> = (0..frames.len()).map(|t| format!("{}/step_{t}", e.trajectory_id)).collect();
            let views: Vec<View> = ids.iter().zip(&frames).map(|(id, f)| View { id, frame: f }).collect();
            let scores = trajectory_scores(&views, &good, reference.path_length_m, embedder.as_ref())
                .with_context(|| e.trajectory_id.clone())?;
            Ok(NavEpisodeReport {
                trajectory_id: e.trajectory_id.clone(),
                scene_id: e.scene_id.clone(),
                scores,
                steps: step_scores(&views, &good, embedder.as_ref())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = NavScores::mean(&reports.iter().map(|r| r.scores).collect::<Vec<_>>());
    save_json(&json!({ "mean": mean, "episodes": reports }), &a.out.join("nav_scores.json"))?;
    write_manifest(&a.out, "eval-nav", a)?;
    println!("{}", serde_json::to_string_pretty(&mean)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct CapEpisodeReport {
    trajectory_id: String,
    scene_id: String,
    scores: CapScores,
    penalized: CapScores,
}

fn eval_cap(a: &EvalCapArgs) -> Result<()> {
    let data = load_dir(&a.dataset)?;
    let gt = ground_truth_index(&data);
    let episodes = load_episodes(&a.predictions)?;
    let mut items = Vec::with_capacity(episodes.len());
    let mut ratios = Vec::with_capacity(episodes.len());
    for e in &episodes {
        let caption = e.caption.clone().ok_or_else(|| anyhow!("{}: episode has no caption", e.trajectory_id))?;
        let ann = data
            .get(&e.scene_id)
            .and_then(|d| d.annotation.as_ref())
            .ok_or_else(|| anyhow!("{}: no annotation for scene {}", e.trajectory_id, e.scene_id))?;
        let reference = gt
            .get(e.trajectory_id.as_str())
            .ok_or_else(|| anyhow!("{}: no ground-truth trajectory", e.trajectory_id))?;
        items.push((caption, ann.captions.clone()));
        ratios.push((reference.path_length_m, path_length(&e.poses)));
    }
    let scores = score_corpus(&items)?;
    let reports = episodes
        .iter()
        .zip(&scores)
        .zip(&ratios)
        .map(|((e, s), &(l_gt, l_pred))| {
            Ok(CapEpisodeReport {
                trajectory_id: e.trajectory_id.clone(),
                scene_id: e.scene_id.clone(),
                scores: *s,
                penalized: s.penalized(l_gt, l_pred)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = CapScores::mean(&scores);
    let mean_penalized = CapScores::mean(&reports.iter().map(|r| r.penalized).collect::<Vec<_>>());
    let summary = json!({ "mean": mean, "mean_penalized": mean_penalized });
    save_json(&json!({ "mean": mean, "mean_penalized": mean_penalized, "episodes": reports }), &a.out.join("cap_scores.json"))?;
    write_manifest(&a.out, "eval-cap", a)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn parse_floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("{what}: expected {n} comma-separated numbers"))?;
    if v.len() != n {
        bail!("{what}: expected {n} comma-separated numbers, got {}", v.len());
    }
    Ok(v)
}

fn render_cmd(a: &RenderArgs) -> Result<()> {
    let rec: SceneRecord = load_json(&a.scene)?;
    let cam = a.camera.intrinsics()?;
    let pose = match (&a.pose, &a.grid) {
        (Some(p), _) => {
            let v = parse_floats(p, 5, "--pose")?;
            Pose::new(Vec3::new(v[0], v[1], v[2]), v[3], v[4])
        }
        (None, Some(g)) => {
            let v = parse_floats(g, 3, "--grid")?;
            let g = GridIndex::new(v[0] as usize, v[1] as usize, v[2] as usize)?;
            look_at_center(g, rec.scene.center, 0.0)
        }
        (None, None) => bail!("one of --pose or --grid is required"),
    };
    let frame = render(&rec.scene, &pose, &cam);
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("frame.png"), frame.png_bytes())?;
    let seg = seg_stats(&frame);
    save_json(
        &json!({ "pose": pose, "ratios": seg.ratios(), "background": seg.background_fraction() }),
        &a.out.join("frame.json"),
    )?;
    write_manifest(&a.out, "render", a)
}

const COMPONENTS: [(&str, [&str; 2]); 5] = [
    ("forward_backward", ["forward", "backward"]),
    ("left_right", ["left", "right"]),
    ("up_down", ["up", "down"]),
    ("heading", ["left", "right"]),
    ("elevation", ["up", "down"]),
];

#[derive(Debug, Serialize)]
struct ComponentHistogram {
    /// Non-stop actions by direction; "none" when the component is zero.
    directions: BTreeMap<String, usize>,
    bin_edges: Vec<f64>,
    /// Magnitude counts per direction.
    magnitudes: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Serialize)]
struct ActionStats {
    episodes: usize,
    actions: usize,
    stop: usize,
    components: BTreeMap<String, ComponentHistogram>,
}

fn action_stats(episodes: &[Vec<Action>], bins: usize) -> ActionStats {
    let bins = bins.max(1);
    let mut components = BTreeMap::new();
    for (c, (name, [pos, neg])) in COMPONENTS.iter().enumerate() {
        let limit = if c < 3 { MAX_MOVE } else { std::f64::consts::PI };
        let edges = (0..=bins).map(|b| limit * b as f64 / bins as f64).collect();
        let directions = [*pos, *neg, "none"].iter().map(|d| (d.to_string(), 0)).collect();
        let magnitudes = [*pos, *neg].iter().map(|d| (d.to_string(), vec![0; bins])).collect();
        components.insert(name.to_string(), ComponentHistogram { directions, bin_edges: edges, magnitudes });
    }
    let mut stats = ActionStats { episodes: episodes.len(), actions: 0, stop: 0, components };
    for a in episodes.iter().flatten() {
        stats.actions += 1;
        if a.is_stop() {
            stats.stop += 1;
            continue;
        }
        let (signs, amounts) = (a.signs(), a.amounts());
        for (c, (name, [pos, neg])) in COMPONENTS.iter().enumerate() {
            let h = stats.components.get_mut(*name).expect("component present");
            let dir = match signs[c] {
                s if s > 0.0 => *pos,
                s if s < 0.0 => *neg,
                _ => "none",
            };
            *h.directions.get_mut(dir).expect("direction present") += 1;
            if dir != "none" {
                let limit = *h.bin_edges.last().expect("edges");
                let b = ((amounts[c] / limit * bins as f64) as usize).min(bins - 1);
                h.magnitudes.get_mut(dir).expect("direction present")[b] += 1;
            }
        }
    }
    stats
}

fn stats_svg(stats: &ActionStats) -> String {
    let (bar, gap, group_gap, chart_h) = (28.0, 4.0, 36.0, 200.0);
    let max = stats
        .components
        .values()
        .flat_map(|h| h.directions.values())
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let group_w = 3.0 * bar + 2.0 * gap;
    let width = 40.0 + COMPONENTS.len() as f64 * (group_w + group_gap);
    let height = chart_h + 80.0;
    let colors = ["#4c72b0", "#dd8452", "#b0b0b0"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<text x="10" y="14" font-size="12">Action directions ({} actions, {} stop)</text>"#, stats.actions, stats.stop);
    let base = chart_h + 30.0;
    for (g, (name, [pos, neg])) in COMPONENTS.iter().enumerate() {
        let h = &stats.components[*name];
        let x0 = 30.0 + g as f64 * (group_w + group_gap);
        for (k, dir) in [*pos, *neg, "none"].iter().enumerate() {
            let n = h.directions[*dir];
            let bh = chart_h * n as f64 / max;
            let x = x0 + k as f64 * (bar + gap);
            let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="{bar}" height="{bh}" fill="{}"><title>{name} {dir}: {n}</title></rect>"#, base - bh, colors[k]);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{dir}</text>"#, x + bar / 2.0, base + 12.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{n}</text>"#, x + bar / 2.0, base - bh - 3.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">{name}</text>"#, x0 + group_w / 2.0, base + 28.0);
    }
    s.push_str("</svg>\n");
    s
}

fn stats_cmd(a: &StatsArgs) -> Result<()> {
    let episodes: Vec<Vec<Action>> = match (&a.dataset, &a.predictions) {
        (Some(dir), _) => load_dir(dir)?
            .values()
            .flat_map(|d| d.trajectories.iter().map(|t| t.actions.clone()))
            .collect(),
        (None, Some(p)) => load_episodes(p)?.into_iter().map(|e| e.actions).collect(),
        (None, None) => bail!("one of --dataset or --predictions is required"),
    };
    let stats = action_stats(&episodes, a.bins);
    save_json(&stats, &a.out.join("action_stats.json"))?;
    if a.svg {
        fs::write(a.out.join("action_stats.svg"), stats_svg(&stats))?;
    }
    write_manifest(&a.out, "stats", a)?;
    println!("{} actions over {} episodes", stats.actions, stats.episodes);
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let data = load_dir(&a.dataset)?;
    let config = ServerConfig {
        max_steps: a.max_steps,
        camera: a.camera.intrinsics()?,
        privileged: a.privileged,
    };
    let world = World::new(data.into_values().map(|d| d.scene).collect(), config);
    let handle = spawn_server(world, a.addr.as_str()).with_context(|| format!("binding {}", a.addr))?;
    println!("listening on {}", handle.local_addr());
    handle.join();
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ET_SIM_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("ET_SIM_THREADS={v:?} is not a thread count"))?;
        if n == 0 {
            bail!("ET_SIM_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::GenScenes(a) => gen_scenes(a),
        Command::Annotate(a) => annotate(a),
        Command::GenTrajectories(a) => gen_trajectories(a),
        Command::MakeDataset(a) => make_dataset_cmd(a),
        Command::RunBaseline(a) => run_baseline(a),
        Command::EvalNav(a) => eval_nav(a),
        Command::EvalCap(a) => eval_cap(a),
        Command::Render(a) => render_cmd(a),
        Command::Stats(a) => stats_cmd(a),
        Command::Serve(a) => serve(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors exit with status 2 inside `parse`.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
