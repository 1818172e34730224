//! On-disk records, split assignment and whole-dataset generation.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! scenes/<scene_id>.json        SceneRecord
//! annotations/<scene_id>.json   AnnotationRecord
//! trajectories/<scene_id>.json  list of TrajectoryRecord
//! splits.json                   scene_id -> split label
//! manifest.json                 config, catalog version, per-scene seeds
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::captioner::{caption_trajectory, TemplateBank, DEFAULT_CONFIDENCE};
use crate::geometry::{wrap_angle, CameraIntrinsics, Pose};
use crate::gridworld::{replay, Action, NavSpace, DEFAULT_MAX_STEPS};
use crate::oracle::{
    gen_ground_truth, sample_candidates, select_good_viewpoints, CandidateShell, PlanError, Trajectory,
    DEFAULT_CANDIDATES, DEFAULT_GOOD_VIEWPOINTS, DEFAULT_STARTS_PER_VIEWPOINT,
};
use crate::render::detect;
use crate::scenegen::{generate_scene, CategoryKind, Catalog, Scene, SceneError};

/// Tolerance used when checking stored poses against a replay.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: at {pointer}: {message}")]
    Schema { path: PathBuf, pointer: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Serializes with sorted keys and shortest round-trip floats.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, DatasetError> {
    let v = serde_json::to_value(value).map_err(|e| DatasetError::Invalid(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| DatasetError::Invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, to_canonical_json(value)?).map_err(io_err(path))
}

/// Parses `text`, reporting schema errors with the JSON pointer of the
/// offending field.
pub fn from_json_str<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = e.path().to_string();
        DatasetError::Schema {
            path: path.to_path_buf(),
            pointer: if pointer == "." { "/".into() } else { pointer },
            message: e.into_inner().to_string(),
        }
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    from_json_str(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub catalog_version: String,
    pub scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub scene_id: String,
    pub trajectory_id: String,
    /// Index into the scene's good viewpoints.
    pub good_viewpoint: usize,
    pub start: Pose,
    pub poses: Vec<Pose>,
    pub actions: Vec<Action>,
    pub path_length_m: f64,
}

impl TrajectoryRecord {
    pub fn from_trajectory(scene_id: &str, good_viewpoint: usize, n: usize, t: &Trajectory) -> Self {
        Self {
            scene_id: scene_id.to_string(),
            trajectory_id: format!("{scene_id}_vp{good_viewpoint}_{n}"),
            good_viewpoint,
            start: t.poses[0],
            poses: t.poses.clone(),
            actions: t.actions.clone(),
            path_length_m: t.path_length_m,
        }
    }

    /// Replays the stored actions and compares every pose.
    pub fn check_replay(&self, nav: &NavSpace) -> Result<(), DatasetError> {
        let max_steps = self.actions.len().max(DEFAULT_MAX_STEPS);
        let state = replay(nav, self.start, &self.actions, max_steps)
            .map_err(|e| DatasetError::Invalid(format!("{}: {e}", self.trajectory_id)))?;
        // A terminal stop repeats the last pose, which the record omits.
        if state.pose_history.len() < self.poses.len() || state.pose_history.len() > self.poses.len() + 1 {
            return Err(DatasetError::Invalid(format!(
                "{}: replay visits {} poses, record has {}",
                self.trajectory_id,
                state.pose_history.len(),
                self.poses.len()
            )));
        }
        for (a, b) in self.poses.iter().zip(&state.pose_history) {
            let err = (a.position - b.position)
                .norm()
                .max(wrap_angle(a.heading - b.heading).abs())
                .max((a.elevation - b.elevation).abs());
            if err > REPLAY_TOLERANCE {
                return Err(DatasetError::Invalid(format!("{}: replay deviates by {err}", self.trajectory_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoodViewpoint {
    pub pose: Pose,
    /// Identifier used to look up external embeddings.
    pub frame_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub scene_id: String,
    pub good_viewpoints: Vec<GoodViewpoint>,
    pub captions: Vec<String>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.good_viewpoints.is_empty() {
            return Err(DatasetError::Invalid(format!("{}: no good viewpoints", self.scene_id)));
        }
        if self.captions.is_empty() || self.captions.iter().any(|c| c.trim().is_empty()) {
            return Err(DatasetError::Invalid(format!("{}: captions must be non-empty", self.scene_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Common,
    NovelInstance,
    NovelCategory,
}

impl Subset {
    pub fn label(self) -> &'static str {
        match self {
            Subset::Common => "common",
            Subset::NovelInstance => "novel_instance",
            Subset::NovelCategory => "novel_category",
        }
    }
}

/// Novel category if any category is unseen in training; otherwise novel
/// instance if more than half of the instances are unseen; otherwise common.
pub fn assign_split(scene: &Scene, train_assets: &BTreeSet<String>, train_categories: &BTreeSet<String>) -> Subset {
    if scene.instances.iter().any(|i| !train_categories.contains(&i.category)) {
        return Subset::NovelCategory;
    }
    let unseen = scene.instances.iter().filter(|i| !train_assets.contains(&i.asset_id)).count();
    if 2 * unseen > scene.instances.len() {
        Subset::NovelInstance
    } else {
        Subset::Common
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub first_seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Placing categories held out of the training scenes.
    pub held_out_categories: usize,
    pub candidates: usize,
    pub good_viewpoints: usize,
    pub starts_per_viewpoint: usize,
    pub captions_per_scene: usize,
    pub camera: CameraIntrinsics,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            first_seed: 0,
            train: 50,
            val: 10,
            test: 10,
            held_out_categories: 3,
            candidates: DEFAULT_CANDIDATES,
            good_viewpoints: DEFAULT_GOOD_VIEWPOINTS,
            starts_per_viewpoint: DEFAULT_STARTS_PER_VIEWPOINT,
            captions_per_scene: 3,
            camera: CameraIntrinsics::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub seed: u64,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub catalog_version: String,
    pub held_out_categories: Vec<String>,
    pub scenes: Vec<ManifestEntry>,
}

/// Everything produced for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub scene: SceneRecord,
    pub annotation: AnnotationRecord,
    pub trajectories: Vec<TrajectoryRecord>,
}

fn derived_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt)
}

/// Good viewpoints, ground-truth trajectories and template reference
/// captions for one scene.
pub fn annotate_scene(
    scene: &Scene,
    catalog_version: &str,
    config: &DatasetConfig,
    bank: &TemplateBank,
) -> Result<SceneBundle, DatasetError> {
    let nav = NavSpace::new(scene);
    let cam = &config.camera;
    let mut rng = derived_rng(scene.seed, 1);
    let candidates = sample_candidates(scene, &nav, &mut rng, config.candidates, &CandidateShell::default(), cam);
    let good = select_good_viewpoints(&candidates, config.good_viewpoints);
    let trajs = gen_ground_truth(&nav, &good, &mut rng, config.starts_per_viewpoint, DEFAULT_MAX_STEPS)?;
    let trajectories = trajs
        .iter()
        .enumerate()
        .map(|(n, t)| {
            let vp = n / config.starts_per_viewpoint.max(1);
            TrajectoryRecord::from_trajectory(&scene.scene_id, vp, n % config.starts_per_viewpoint.max(1), t)
        })
        .collect();

    let views: Vec<(Pose, _)> = good.iter().map(|g| (g.pose, detect(scene, &g.pose, cam))).collect();
    let captions = (0..config.captions_per_scene as u64)
        .map(|k| caption_trajectory(scene, &views, bank, DEFAULT_CONFIDENCE, &mut derived_rng(scene.seed, 100 + k)))
        .collect();
    let annotation = AnnotationRecord {
        scene_id: scene.scene_id.clone(),
        good_viewpoints: good
            .iter()
            .enumerate()
            .map(|(k, g)| GoodViewpoint {
                pose: g.pose,
                frame_id: format!("{}/good_{k}", scene.scene_id),
                score: g.score,
            })
            .collect(),
        captions,
    };
    Ok(SceneBundle {
        scene: SceneRecord {
            catalog_version: catalog_version.to_string(),
            scene: scene.clone(),
        },
        annotation,
        trajectories,
    })
}

/// Placing categories held out of training, chosen from the first seed.
pub fn held_out_categories(catalog: &Catalog, config: &DatasetConfig) -> Vec<String> {
    let mut names: Vec<String> = catalog.of_kind(CategoryKind::Placing).map(|c| c.name.clone()).collect();
    names.shuffle(&mut derived_rng(config.first_seed, 7));
    names.truncate(config.held_out_categories);
    names.sort();
    names
}

/// Generates every scene and record and writes the dataset to `dir`.
pub fn make_dataset(dir: &Path, catalog: &Catalog, config: &DatasetConfig) -> Result<Manifest, DatasetError> {
    let bank = TemplateBank::builtin();
    let held_out = held_out_categories(catalog, config);
    let train_catalog = catalog.without(&held_out)?;
    let version = catalog.version();
    let total = config.train + config.val + config.test;
    let seeds: Vec<u64> = (0..total as u64).map(|i| config.first_seed + i).collect();

    let bundles: Vec<SceneBundle> = seeds
        .par_iter()
        .enumerate()
        .map(|(n, &seed)| {
            let cat = if n < config.train { &train_catalog } else { catalog };
            let scene = generate_scene(seed, cat)?;
            annotate_scene(&scene, &version, config, &bank)
        })
        .collect::<Result<_, _>>()?;

    let mut train_assets = BTreeSet::new();
    let mut train_categories = BTreeSet::new();
    for b in &bundles[..config.train] {
        for i in &b.scene.scene.instances {
            train_assets.insert(i.asset_id.clone());
            train_categories.insert(i.category.clone());
        }
    }
    let mut splits = BTreeMap::new();
    let mut entries = Vec::with_capacity(total);
    for (n, b) in bundles.iter().enumerate() {
        let label = if n < config.train {
            "train".to_string()
        } else {
            let prefix = if n < config.train + config.val { "val" } else { "test" };
            format!("{prefix}_{}", assign_split(&b.scene.scene, &train_assets, &train_categories).label())
        };
        let id = b.scene.scene.scene_id.clone();
        splits.insert(id.clone(), label.clone());
        entries.push(ManifestEntry {
            scene_id: id,
            seed: seeds[n],
            split: label,
        });
    }

    bundles.par_iter().try_for_each(|b| {
        let id = &b.scene.scene.scene_id;
        save_json(&b.scene, &dir.join("scenes").join(format!("{id}.json")))?;
        save_json(&b.annotation, &dir.join("annotations").join(format!("{id}.json")))?;
        save_json(&b.trajectories, &dir.join("trajectories").join(format!("{id}.json")))
    })?;
    save_json(&splits, &dir.join("splits.json"))?;
    let manifest = Manifest {
        config: config.clone(),
        catalog_version: version,
        held_out_categories: held_out,
        scenes: entries,
    };
    save_json(&manifest, &dir.join("manifest.json"))?;
    log::info!("wrote {} scenes to {}", total, dir.display());
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub splits: BTreeMap<String, String>,
    pub scenes: BTreeMap<String, SceneBundle>,
}

/// Loads a dataset directory. With `validate`, every trajectory is replayed
/// and every annotation checked.
pub fn load_dataset(dir: &Path, validate: bool) -> Result<Dataset, DatasetError> {
    let manifest: Manifest = load_json(&dir.join("manifest.json"))?;
    let splits: BTreeMap<String, String> = load_json(&dir.join("splits.json"))?;
    let scenes = manifest
        .scenes
        .par_iter()
        .map(|e| {
            let id = &e.scene_id;
            let scene: SceneRecord = load_json(&dir.join("scenes").join(format!("{id}.json")))?;
            let annotation: AnnotationRecord = load_json(&dir.join("annotations").join(format!("{id}.json")))?;
            let trajectories: Vec<TrajectoryRecord> = load_json(&dir.join("trajectories").join(format!("{id}.json")))?;
            if validate {
                annotation.validate()?;
                let nav = NavSpace::new(&scene.scene);
                for t in &trajectories {
                    if &t.scene_id != id {
                        return Err(DatasetError::Invalid(format!("{}: references scene {}", t.trajectory_id, t.scene_id)));
                    }
                    t.check_replay(&nav)?;
                }
            }
            Ok((id.clone(), SceneBundle { scene, annotation, trajectories }))
        })
        .collect::<Result<BTreeMap<_, _>, DatasetError>>()?;
    for e in &manifest.scenes {
        if splits.get(&e.scene_id) != Some(&e.split) {
            return Err(DatasetError::Invalid(format!("{}: split mismatch between manifest and splits.json", e.scene_id)));
        }
    }
    Ok(Dataset { manifest, splits, scenes })
}

/// Replaces the reference captions of annotated scenes, e.g. with human
/// captions. Unknown scene ids are an error.
pub fn import_captions(dir: &Path, captions: &BTreeMap<String, Vec<String>>) -> Result<usize, DatasetError> {
    for (id, caps) in captions {
        let path = dir.join("annotations").join(format!("{id}.json"));
        if !path.exists() {
            return Err(DatasetError::Invalid(format!("no annotation for scene {id}")));
        }
        let mut rec: AnnotationRecord = load_json(&path)?;
        rec.captions = caps.clone();
        rec.validate()?;
        save_json(&rec, &path)?;
    }
    Ok(captions.len())
}
