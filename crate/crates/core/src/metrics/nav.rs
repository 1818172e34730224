//! Navigation metrics: navigation error (NE), image similarity (IS) and
//! segmentation similarity (SS), averaged over every viewpoint of a
//! trajectory, plus their length-penalized variants.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{length_ratio, MetricError};
use crate::geometry::{Pose, Vec3};
use crate::render::{seg_stats, Frame, SegStats};

/// Background offset in the image-similarity rescaling.
pub const IS_GAMMA: f64 = 0.7;

/// A rendered view with a stable identifier.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub id: &'a str,
    pub frame: &'a Frame,
}

/// Maps a view to a unit-norm vector of fixed dimension.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, view: View<'_>) -> Result<Vec<f64>, MetricError>;
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

/// Default embedder: per-category (area ratio, mean r, mean g, mean b),
/// L2-normalized. An all-zero profile maps to the first basis vector.
#[derive(Debug, Clone)]
pub struct SemanticProfileEmbedder {
    categories: Vec<String>,
    index: HashMap<String, usize>,
}

impl SemanticProfileEmbedder {
    pub fn new(categories: Vec<String>) -> Self {
        let index = categories.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Self { categories, index }
    }

    pub fn from_catalog(catalog: &crate::scenegen::Catalog) -> Self {
        Self::new(catalog.categories().iter().map(|c| c.name.clone()).collect())
    }

    pub fn profile(&self, frame: &Frame) -> Vec<f64> {
        let n = self.categories.len();
        let mut count = vec![0usize; n];
        let mut rgb = vec![[0u64; 3]; n];
        for (c, px) in frame.category.iter().zip(&frame.rgb) {
            if let Some(&slot) = frame.category_name(*c).and_then(|name| self.index.get(name)) {
                count[slot] += 1;
                for ch in 0..3 {
                    rgb[slot][ch] += px[ch] as u64;
                }
            }
        }
        let total = frame.pixel_count().max(1) as f64;
        let mut v = Vec::with_capacity(4 * n);
        for slot in 0..n {
            if count[slot] == 0 {
                v.extend_from_slice(&[0.0; 4]);
            } else {
                let k = count[slot] as f64;
                v.push(k / total);
                v.extend(rgb[slot].iter().map(|&s| s as f64 / k / 255.0));
            }
        }
        v
    }
}

impl Embedder for SemanticProfileEmbedder {
    fn dimension(&self) -> usize {
        4 * self.categories.len()
    }

    fn embed(&self, view: View<'_>) -> Result<Vec<f64>, MetricError> {
        Ok(normalized(self.profile(view.frame)).unwrap_or_else(|| {
            let mut e = vec![0.0; self.dimension().max(1)];
            e[0] = 1.0;
            e
        }))
    }
}

/// Pre-computed embeddings looked up by view id.
#[derive(Debug, Clone)]
pub struct ExternalEmbeddings {
    vectors: HashMap<String, Vec<f64>>,
    dimension: usize,
}

impl ExternalEmbeddings {
    /// Accepts a map from view id to vector. Vectors are normalized; a
    /// non-unit input is logged.
    pub fn from_map(map: BTreeMap<String, Vec<f64>>) -> Result<Self, MetricError> {
        let mut dimension = None;
        let mut vectors = HashMap::with_capacity(map.len());
        for (id, v) in map {
            match dimension {
                None => dimension = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(MetricError::DimensionMismatch { expected: d, got: v.len() })
                }
                _ => {}
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                log::warn!("embedding {id:?} has norm {norm}; re-normalizing");
            }
            let unit = normalized(v).ok_or_else(|| MetricError::EmbeddingFile(format!("zero vector for {id:?}")))?;
            vectors.insert(id, unit);
        }
        Ok(Self {
            vectors,
            dimension: dimension.unwrap_or(0),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, MetricError> {
        let map: BTreeMap<String, Vec<f64>> =
            serde_json::from_str(text).map_err(|e| MetricError::EmbeddingFile(e.to_string()))?;
        Self::from_map(map)
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let text = std::fs::read_to_string(path).map_err(|e| MetricError::EmbeddingFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Loads an embedding file mapping frame ids to vectors.
pub fn load_external_embeddings(path: &Path) -> Result<ExternalEmbeddings, MetricError> {
    ExternalEmbeddings::load(path)
}

impl Embedder for ExternalEmbeddings {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, view: View<'_>) -> Result<Vec<f64>, MetricError> {
        self.vectors
            .get(view.id)
            .cloned()
            .ok_or_else(|| MetricError::MissingEmbedding(view.id.to_string()))
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Rescaled cosine similarity, clamped to [0, 1].
pub fn is_from_cosine(cos: f64) -> f64 {
    ((cos - IS_GAMMA) / (1.0 - IS_GAMMA)).clamp(0.0, 1.0)
}

/// Minimum Manhattan distance from `position` to any good viewpoint.
pub fn ne_step(position: Vec3, good_positions: &[Vec3]) -> Result<f64, MetricError> {
    good_positions
        .iter()
        .map(|g| position.manhattan(*g))
        .min_by(f64::total_cmp)
        .ok_or(MetricError::EmptyGoodSet)
}

/// Image similarity of one embedding against the good-view embeddings.
pub fn is_step(embedding: &[f64], good_embeddings: &[Vec<f64>]) -> Result<f64, MetricError> {
    good_embeddings
        .iter()
        .map(|g| is_from_cosine(cosine(embedding, g)))
        .max_by(f64::total_cmp)
        .ok_or(MetricError::EmptyGoodSet)
}

/// Segmentation similarity of one frame's area ratios against each good
/// frame's ratios. A good frame covering no category scores 1.
pub fn ss_from_ratios(ratios: &BTreeMap<String, f64>, goods: &[BTreeMap<String, f64>]) -> Result<f64, MetricError> {
    goods
        .iter()
        .map(|good| {
            let covered: Vec<(&String, &f64)> = good.iter().filter(|(_, a)| **a > 0.0).collect();
            if covered.is_empty() {
                return 1.0;
            }
            let sum: f64 = covered
                .iter()
                .map(|(c, a_good)| (ratios.get(*c).copied().unwrap_or(0.0) / **a_good).min(1.0))
                .sum();
            sum / covered.len() as f64
        })
        .max_by(f64::total_cmp)
        .ok_or(MetricError::EmptyGoodSet)
}

pub fn ss_step(stats: &SegStats, goods: &[SegStats]) -> Result<f64, MetricError> {
    let good: Vec<BTreeMap<String, f64>> = goods.iter().map(SegStats::ratios).collect();
    ss_from_ratios(&stats.ratios(), &good)
}

/// The good viewpoints of one scene, prepared for scoring.
#[derive(Debug, Clone)]
pub struct GoodSet {
    pub positions: Vec<Vec3>,
    pub embeddings: Vec<Vec<f64>>,
    pub seg: Vec<BTreeMap<String, f64>>,
}

impl GoodSet {
    pub fn new(views: &[View<'_>], embedder: &dyn Embedder) -> Result<Self, MetricError> {
        if views.is_empty() {
            return Err(MetricError::EmptyGoodSet);
        }
        Ok(Self {
            positions: views.iter().map(|v| v.frame.pose.position).collect(),
            embeddings: views.iter().map(|v| embedder.embed(*v)).collect::<Result<_, _>>()?,
            seg: views.iter().map(|v| seg_stats(v.frame).ratios()).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavScores {
    pub ne: f64,
    pub is: f64,
    pub ss: f64,
    pub ne_l: f64,
    pub is_l: f64,
    pub ss_l: f64,
    pub length_ratio: f64,
}

impl NavScores {
    pub fn from_unpenalized(ne: f64, is: f64, ss: f64, r: f64) -> Self {
        Self {
            ne,
            is,
            ss,
            ne_l: ne / r,
            is_l: is * r,
            ss_l: ss * r,
            length_ratio: r,
        }
    }

    /// Component-wise mean.
    pub fn mean(items: &[NavScores]) -> Option<NavScores> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let avg = |f: fn(&NavScores) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(NavScores {
            ne: avg(|s| s.ne),
            is: avg(|s| s.is),
            ss: avg(|s| s.ss),
            ne_l: avg(|s| s.ne_l),
            is_l: avg(|s| s.is_l),
            ss_l: avg(|s| s.ss_l),
            length_ratio: avg(|s| s.length_ratio),
        })
    }
}

/// Geometric length of a pose sequence.
pub fn path_length(poses: &[Pose]) -> f64 {
    poses.windows(2).map(|w| w[0].position.distance(w[1].position)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub ne: f64,
    pub is: f64,
    pub ss: f64,
}

/// NE/IS/SS of every view against the good set.
pub fn step_scores(views: &[View<'_>], good: &GoodSet, embedder: &dyn Embedder) -> Result<Vec<StepScore>, MetricError> {
    views
        .iter()
        .map(|v| {
            Ok(StepScore {
                ne: ne_step(v.frame.pose.position, &good.positions)?,
                is: is_step(&embedder.embed(*v)?, &good.embeddings)?,
                ss: ss_from_ratios(&seg_stats(v.frame).ratios(), &good.seg)?,
            })
        })
        .collect()
}

/// Per-step NE/IS/SS averaged over every view of a predicted trajectory
/// (start and end included), with the length penalty applied.
pub fn trajectory_scores(
    views: &[View<'_>],
    good: &GoodSet,
    l_gt: f64,
    embedder: &dyn Embedder,
) -> Result<NavScores, MetricError> {
    if views.is_empty() {
        return Err(MetricError::EmptyTrajectory);
    }
    let poses: Vec<Pose> = views.iter().map(|v| v.frame.pose).collect();
    let r = length_ratio(l_gt, path_length(&poses))?;
    let steps = step_scores(views, good, embedder)?;
    let n = steps.len() as f64;
    let mean = |f: fn(&StepScore) -> f64| steps.iter().map(f).sum::<f64>() / n;
    Ok(NavScores::from_unpenalized(mean(|s| s.ne), mean(|s| s.is), mean(|s| s.ss), r))
}
