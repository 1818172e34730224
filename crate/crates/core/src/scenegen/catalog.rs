//! Category catalog, procedural asset pool, resizing and capped category sampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::geometry::Vec3;

const DEFAULT_CATALOG: &str = include_str!("../../data/catalog.json");

/// Scale range applied to raw asset dimensions so that unresized assets are
/// inconsistent in size, as imported meshes would be.
const IMPORT_SCALE: (f64, f64) = (0.3, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryKind {
    Base,
    Placing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsRange {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoverningDim {
    /// Longest horizontal extent.
    Length,
    Height,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResizeRule {
    pub governing: GoverningDim,
    pub target: f64,
    #[serde(default)]
    pub max_height: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub name: String,
    pub kind: CategoryKind,
    pub dims_range: DimsRange,
    pub resize_rule: ResizeRule,
    /// Upper bound on the per-draw selection probability.
    pub sampling_cap: f64,
    /// Unnormalized selection weight (instance count of the category).
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default = "default_asset_count")]
    pub asset_count: usize,
}

fn default_weight() -> f64 {
    1.0
}

fn default_asset_count() -> usize {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAsset {
    pub asset_id: String,
    pub category: String,
    pub raw_dims: Vec3,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    categories: Vec<Category>,
}

impl Catalog {
    pub fn new(categories: Vec<Category>) -> Result<Self, SceneError> {
        if categories.is_empty() {
            return Err(SceneError::EmptyCatalog);
        }
        let mut seen = std::collections::HashSet::new();
        for c in &categories {
            if !seen.insert(c.name.as_str()) {
                return Err(SceneError::InvalidCategory(format!("duplicate name {:?}", c.name)));
            }
            let r = &c.dims_range;
            let ok_range = |a: [f64; 2]| a[0] > 0.0 && a[0] <= a[1] && a[1].is_finite();
            if !(ok_range(r.x) && ok_range(r.y) && ok_range(r.z)) {
                return Err(SceneError::InvalidCategory(format!("{}: bad dims_range", c.name)));
            }
            if !(c.resize_rule.target > 0.0) || c.resize_rule.max_height.is_some_and(|h| h <= 0.0) {
                return Err(SceneError::InvalidCategory(format!("{}: bad resize_rule", c.name)));
            }
            if !(0.0..=1.0).contains(&c.sampling_cap) || !(c.weight > 0.0) || c.asset_count == 0 {
                return Err(SceneError::InvalidCategory(format!(
                    "{}: cap, weight or asset_count out of range",
                    c.name
                )));
            }
        }
        Ok(Self { categories })
    }

    /// The catalog shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cats: Vec<Category> = serde_path_to_error::deserialize(de)
            .map_err(|e| SceneError::InvalidCategory(format!("{}: {}", e.path(), e.inner())))?;
        Self::new(cats)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.categories).expect("catalog serializes")
    }

    /// Stable content hash used as the catalog version string.
    pub fn version(&self) -> String {
        let canonical = serde_json::to_string(&self.categories).expect("catalog serializes");
        format!("{:016x}", fnv1a(canonical.as_bytes()))
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn get(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    pub fn of_kind(&self, kind: CategoryKind) -> impl Iterator<Item = &Category> {
        self.categories.iter().filter(move |c| c.kind == kind)
    }

    /// A copy of the catalog without the named categories.
    pub fn without(&self, names: &[String]) -> Result<Self, SceneError> {
        Self::new(
            self.categories
                .iter()
                .filter(|c| !names.contains(&c.name))
                .cloned()
                .collect(),
        )
    }

    /// The `index`-th procedural asset of a category. Pure function of the asset id.
    pub fn asset(&self, category: &Category, index: usize) -> InstanceAsset {
        let asset_id = format!("{}_{:02}", category.name.replace(' ', "_"), index);
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(asset_id.as_bytes()));
        let r = &category.dims_range;
        let mut sample = |a: [f64; 2]| if a[0] < a[1] { rng.gen_range(a[0]..=a[1]) } else { a[0] };
        let (x, y, z) = (sample(r.x), sample(r.y), sample(r.z));
        let scale = rng.gen_range(IMPORT_SCALE.0..=IMPORT_SCALE.1);
        let color = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        InstanceAsset {
            asset_id,
            category: category.name.clone(),
            raw_dims: Vec3::new(x * scale, y * scale, z * scale),
            color,
        }
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Uniformly rescales raw dimensions so the governing dimension meets the
/// category target, then scales down again if a height ceiling is exceeded.
pub fn resize_asset(asset: &InstanceAsset, category: &Category) -> Vec3 {
    let d = asset.raw_dims;
    let rule = &category.resize_rule;
    let governing = match rule.governing {
        GoverningDim::Length => d.x.max(d.y),
        GoverningDim::Height => d.z,
    };
    let mut scale = rule.target / governing;
    if let Some(max_h) = rule.max_height {
        if d.z * scale > max_h {
            scale *= max_h / (d.z * scale);
        }
    }
    d * scale
}

/// Probability vector proportional to `weights` with each entry capped at
/// `caps[i]`; excess mass is redistributed among the uncapped entries.
/// When the caps cannot absorb the full mass the caps themselves are normalized.
pub fn capped_distribution(weights: &[f64], caps: &[f64]) -> Vec<f64> {
    let n = weights.len();
    let mut p = vec![0.0; n];
    let mut fixed = vec![false; n];
    loop {
        let fixed_mass: f64 = (0..n).filter(|&i| fixed[i]).map(|i| p[i]).sum();
        let free_weight: f64 = (0..n).filter(|&i| !fixed[i]).map(|i| weights[i]).sum();
        let remaining = 1.0 - fixed_mass;
        if free_weight <= 0.0 {
            break;
        }
        let mut changed = false;
        for i in 0..n {
            if !fixed[i] {
                p[i] = remaining * weights[i] / free_weight;
            }
        }
        for i in 0..n {
            if !fixed[i] && p[i] > caps[i] {
                p[i] = caps[i];
                fixed[i] = true;
                changed = true;
            }
        }
        if !changed {
            return p;
        }
    }
    let total: f64 = caps.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / n as f64; n];
    }
    caps.iter().map(|c| c / total).collect()
}

fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Picks one base category and `k_placing` distinct placing categories.
/// Every individual draw uses the capped distribution over the categories
/// still available, so no category exceeds its cap on any draw.
pub fn select_categories<'a, R: Rng + ?Sized>(
    rng: &mut R,
    catalog: &'a Catalog,
    k_placing: usize,
) -> Result<(&'a Category, Vec<&'a Category>), SceneError> {
    let bases: Vec<&Category> = catalog.of_kind(CategoryKind::Base).collect();
    let mut placings: Vec<&Category> = catalog.of_kind(CategoryKind::Placing).collect();
    if bases.is_empty() {
        return Err(SceneError::EmptyCatalog);
    }
    if placings.len() < k_placing {
        return Err(SceneError::NotEnoughPlacing {
            needed: k_placing,
            available: placings.len(),
        });
    }
    let draw = |rng: &mut R, pool: &[&Category]| {
        let w: Vec<f64> = pool.iter().map(|c| c.weight).collect();
        let caps: Vec<f64> = pool.iter().map(|c| c.sampling_cap).collect();
        sample_index(rng, &capped_distribution(&w, &caps))
    };
    let base = bases[draw(rng, &bases)];
    let mut chosen = Vec::with_capacity(k_placing);
    for _ in 0..k_placing {
        let idx = draw(rng, &placings);
        chosen.push(placings.remove(idx));
    }
    Ok((base, chosen))
}
