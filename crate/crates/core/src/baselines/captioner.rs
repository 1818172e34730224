//! Template captioner: describes the largest detected object, relates every
//! smaller one to an already mentioned larger object, then merges the views
//! of a trajectory into one paragraph.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Pose, Vec3};
use crate::render::Detection;
use crate::scenegen::Scene;

pub const DEFAULT_CONFIDENCE: f64 = 0.9;
pub const MAX_CAPTION_TOKENS: usize = 77;
/// Vertical tolerance for "resting on".
pub const CONTACT_TOLERANCE: f64 = 0.1;
/// Margin by which one horizontal offset must exceed the other.
pub const DOMINANCE_MARGIN: f64 = 0.15;
pub const EMPTY_VIEW: &str = "The view is empty.";

const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.json");

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template bank: {0}")]
    Parse(String),
    #[error("template bank needs at least one {0} template")]
    Empty(&'static str),
    #[error("template {template:?} is missing slot {slot}")]
    MissingSlot { template: String, slot: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateBank {
    pub largest: Vec<String>,
    pub relation: Vec<String>,
    pub leftover: String,
}

impl TemplateBank {
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("builtin templates are valid")
    }

    pub fn from_json(text: &str) -> Result<Self, TemplateError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let bank: TemplateBank = serde_path_to_error::deserialize(de).map_err(|e| TemplateError::Parse(e.to_string()))?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.largest.is_empty() {
            return Err(TemplateError::Empty("largest"));
        }
        if self.relation.is_empty() {
            return Err(TemplateError::Empty("relation"));
        }
        let need = |t: &str, slot: &'static str| {
            if t.contains(slot) {
                Ok(())
            } else {
                Err(TemplateError::MissingSlot { template: t.to_string(), slot })
            }
        };
        for t in &self.largest {
            need(t, "{obj}")?;
        }
        for t in &self.relation {
            need(t, "{obj_s}")?;
            need(t, "{obj_l}")?;
        }
        need(&self.leftover, "{list}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    On,
    Above,
    Below,
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    NextTo,
}

impl Relation {
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::On => "on",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::InFrontOf => "in front of",
            Relation::Behind => "behind",
            Relation::NextTo => "next to",
        }
    }
}

/// Spatial relation of `small` with respect to `large`, seen from `pose`.
pub fn relation_of(small: &Aabb, large: &Aabb, pose: &Pose) -> Relation {
    if (small.min.z - large.max.z).abs() <= CONTACT_TOLERANCE && small.footprint_overlap(large) > 0.0 {
        return Relation::On;
    }
    if small.min.z > large.max.z {
        return Relation::Above;
    }
    if small.max.z < large.min.z {
        return Relation::Below;
    }
    let d = small.center() - large.center();
    let (s, c) = pose.heading.sin_cos();
    let lateral = d.dot(Vec3::new(s, -c, 0.0));
    let depth = d.dot(Vec3::new(c, s, 0.0));
    if lateral.abs() > depth.abs() + DOMINANCE_MARGIN {
        if lateral > 0.0 {
            Relation::RightOf
        } else {
            Relation::LeftOf
        }
    } else if depth.abs() > lateral.abs() + DOMINANCE_MARGIN {
        if depth > 0.0 {
            Relation::Behind
        } else {
            Relation::InFrontOf
        }
    } else {
        Relation::NextTo
    }
}

const PALETTE: [(&str, [f64; 3]); 11] = [
    ("black", [0.0, 0.0, 0.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("gray", [0.5, 0.5, 0.5]),
    ("red", [0.8, 0.1, 0.1]),
    ("orange", [1.0, 0.55, 0.0]),
    ("yellow", [1.0, 0.9, 0.1]),
    ("green", [0.1, 0.6, 0.1]),
    ("blue", [0.1, 0.2, 0.8]),
    ("purple", [0.5, 0.1, 0.6]),
    ("pink", [1.0, 0.6, 0.75]),
    ("brown", [0.55, 0.3, 0.1]),
];

/// Nearest basic color term to an RGB triple in [0, 1].
pub fn color_name(rgb: [f64; 3]) -> &'static str {
    PALETTE
        .iter()
        .min_by(|a, b| {
            let d = |p: &[f64; 3]| (0..3).map(|i| (p[i] - rgb[i]).powi(2)).sum::<f64>();
            d(&a.1).total_cmp(&d(&b.1))
        })
        .map(|(n, _)| *n)
        .unwrap()
}

pub fn article(word: &str) -> &'static str {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// "color category" noun phrase for a detection.
pub fn object_phrase(d: &Detection) -> String {
    format!("{} {}", color_name(d.mean_rgb), d.category.replace('_', " "))
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in slots {
        out = out.replace(k, v);
    }
    out
}

/// Detections above `threshold`, largest pixel bbox first.
pub fn salient(detections: &[Detection], threshold: f64) -> Vec<&Detection> {
    let mut v: Vec<&Detection> = detections.iter().filter(|d| d.confidence > threshold).collect();
    v.sort_by(|a, b| b.bbox.area().cmp(&a.bbox.area()).then(a.instance_index.cmp(&b.instance_index)));
    v
}

/// One sentence per salient detection; "The view is empty." when none.
pub fn caption_view<R: Rng + ?Sized>(
    scene: &Scene,
    pose: &Pose,
    detections: &[Detection],
    bank: &TemplateBank,
    threshold: f64,
    rng: &mut R,
) -> Vec<String> {
    let objs = salient(detections, threshold);
    if objs.is_empty() {
        return vec![EMPTY_VIEW.to_string()];
    }
    let mut out = Vec::with_capacity(objs.len());
    let first = object_phrase(objs[0]);
    let a = article(&first);
    let t = bank.largest.choose(rng).unwrap();
    out.push(fill(t, &[("{A}", &capitalize(a)), ("{a}", a), ("{obj}", &first)]));
    for i in 1..objs.len() {
        let small = objs[i];
        let large = objs[rng.gen_range(0..i)];
        let rel = relation_of(
            &scene.instances[small.instance_index].bbox,
            &scene.instances[large.instance_index].bbox,
            pose,
        )
        .phrase();
        let s = object_phrase(small);
        let a = article(&s);
        let t = bank.relation.choose(rng).unwrap();
        out.push(fill(
            t,
            &[
                ("{A}", &capitalize(a)),
                ("{a}", a),
                ("{Rel}", &capitalize(rel)),
                ("{rel}", rel),
                ("{obj_s}", &s),
                ("{obj_l}", &object_phrase(large)),
            ],
        ));
    }
    out
}

/// Index of the view with the highest sum of salient confidences; the first
/// one wins ties.
pub fn best_view(views: &[Vec<Detection>], threshold: f64) -> Option<usize> {
    let sum = |v: &Vec<Detection>| v.iter().filter(|d| d.confidence > threshold).map(|d| d.confidence).sum::<f64>();
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in views.iter().enumerate() {
        let s = sum(v);
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

fn join_list(items: &[String]) -> String {
    let with_article: Vec<String> = items.iter().map(|s| format!("{} {s}", article(s))).collect();
    match with_article.len() {
        0 => String::new(),
        1 => with_article[0].clone(),
        2 => format!("{} and {}", with_article[0], with_article[1]),
        n => format!("{}, and {}", with_article[..n - 1].join(", "), with_article[n - 1]),
    }
}

/// Keeps at most `max_tokens` whitespace-separated words.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    text.split_whitespace().take(max_tokens).collect::<Vec<_>>().join(" ")
}

/// Paragraph for a trajectory given the pose and detections of each view.
pub fn caption_trajectory<R: Rng + ?Sized>(
    scene: &Scene,
    views: &[(Pose, Vec<Detection>)],
    bank: &TemplateBank,
    threshold: f64,
    rng: &mut R,
) -> String {
    let dets: Vec<Vec<Detection>> = views.iter().map(|(_, d)| d.clone()).collect();
    let Some(best) = best_view(&dets, threshold) else {
        return EMPTY_VIEW.to_string();
    };
    let (pose, best_dets) = &views[best];
    let mut sentences = caption_view(scene, pose, best_dets, bank, threshold, rng);
    let in_best: BTreeSet<usize> = salient(best_dets, threshold).iter().map(|d| d.instance_index).collect();
    let mut seen = BTreeSet::new();
    let mut leftover = Vec::new();
    for (_, v) in views {
        for d in salient(v, threshold) {
            if !in_best.contains(&d.instance_index) && seen.insert(d.instance_index) {
                leftover.push(object_phrase(d));
            }
        }
    }
    if !leftover.is_empty() {
        if sentences == [EMPTY_VIEW] {
            sentences.clear();
        }
        sentences.push(bank.leftover.replace("{list}", &join_list(&leftover)));
    }
    truncate_tokens(&sentences.join(" "), MAX_CAPTION_TOKENS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::PixelRect;
    use crate::scenegen::Instance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst(cat: &str, b: Aabb) -> Instance {
        Instance {
            asset_id: cat.into(),
            category: cat.into(),
            bbox: b,
            yaw: 0.0,
            color: [0.5; 3],
        }
    }

    fn det(i: usize, cat: &str, side: u32, conf: f64, rgb: [f64; 3]) -> Detection {
        Detection {
            instance_index: i,
            category: cat.into(),
            bbox: PixelRect { x0: 0, y0: 0, x1: side - 1, y1: side - 1 },
            visible_pixels: (side * side) as usize,
            confidence: conf,
            mean_rgb: rgb,
        }
    }

    fn table_cup() -> Scene {
        Scene::from_instances(
            "t",
            0,
            vec![
                inst("table", Aabb::new(Vec3::new(-0.6, -0.4, 0.0), Vec3::new(0.6, 0.4, 0.75))),
                inst("cup", Aabb::new(Vec3::new(-0.05, -0.05, 0.75), Vec3::new(0.05, 0.05, 0.87))),
            ],
        )
    }

    #[test]
    fn builtin_bank_shape() {
        let b = TemplateBank::builtin();
        assert_eq!(b.largest.len(), 7);
        assert_eq!(b.relation.len(), 2);
        assert!(TemplateBank::from_json(r#"{"largest": [], "relation": ["{obj_s}{obj_l}"], "leftover": "{list}"}"#).is_err());
        assert!(TemplateBank::from_json(r#"{"largest": ["x"], "relation": ["{obj_s}{obj_l}"], "leftover": "{list}"}"#).is_err());
    }

    #[test]
    fn relations() {
        let pose = Pose::new(Vec3::new(-3.0, 0.0, 1.0), 0.0, 0.0);
        let s = table_cup();
        assert_eq!(relation_of(&s.instances[1].bbox, &s.instances[0].bbox, &pose), Relation::On);
        let a = Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.5, 0.5, 0.5));
        // camera looks along +x, so +y is camera-left
        assert_eq!(relation_of(&a.translated(Vec3::new(0.0, 1.0, 0.0)), &a, &pose), Relation::LeftOf);
        assert_eq!(relation_of(&a.translated(Vec3::new(0.0, -1.0, 0.0)), &a, &pose), Relation::RightOf);
        assert_eq!(relation_of(&a.translated(Vec3::new(-1.0, 0.0, 0.0)), &a, &pose), Relation::InFrontOf);
        assert_eq!(relation_of(&a.translated(Vec3::new(1.0, 0.0, 0.0)), &a, &pose), Relation::Behind);
        assert_eq!(relation_of(&a.translated(Vec3::new(0.05, 0.05, 0.0)), &a, &pose), Relation::NextTo);
        assert_eq!(relation_of(&a.translated(Vec3::new(0.0, 0.0, 1.0)), &a, &pose), Relation::Above);
        assert_eq!(relation_of(&a, &a.translated(Vec3::new(0.0, 0.0, 1.0)), &pose), Relation::Below);
        assert_eq!(relation_of(&a.translated(Vec3::new(2.0, 0.0, 0.3)), &a, &pose), Relation::Behind);
    }

    #[test]
    fn colors_and_articles() {
        assert_eq!(color_name([0.95, 0.1, 0.05]), "red");
        assert_eq!(color_name([0.02, 0.02, 0.02]), "black");
        assert_eq!(color_name([0.52, 0.5, 0.48]), "gray");
        assert_eq!(color_name([1.0, 0.6, 0.0]), "orange");
        assert_eq!(article("orange ball"), "an");
        assert_eq!(article("red ball"), "a");
    }

    #[test]
    fn single_object_and_empty_view() {
        let s = table_cup();
        let bank = TemplateBank::builtin();
        let pose = Pose::new(Vec3::new(-3.0, 0.0, 1.0), 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = caption_view(&s, &pose, &[det(0, "table", 30, 1.0, [0.55, 0.3, 0.1])], &bank, 0.9, &mut rng);
        assert_eq!(out.len(), 1);
        assert!(out[0].contains("brown table"), "{}", out[0]);
        assert_eq!(caption_view(&s, &pose, &[], &bank, 0.9, &mut rng), vec![EMPTY_VIEW]);
        let low = [det(0, "table", 30, 0.5, [0.5; 3])];
        assert_eq!(caption_view(&s, &pose, &low, &bank, 0.9, &mut rng), vec![EMPTY_VIEW]);
    }

    #[test]
    fn cup_on_table_uses_on() {
        let s = table_cup();
        let bank = TemplateBank::builtin();
        let pose = Pose::new(Vec3::new(-3.0, 0.0, 1.0), 0.0, 0.0);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dets = [det(1, "cup", 4, 1.0, [1.0, 1.0, 1.0]), det(0, "table", 30, 1.0, [0.55, 0.3, 0.1])];
            let out = caption_view(&s, &pose, &dets, &bank, 0.9, &mut rng);
            assert_eq!(out.len(), 2);
            assert!(out[1] == "A white cup is on the brown table." || out[1] == "On the brown table is a white cup.", "{}", out[1]);
        }
    }

    #[test]
    fn trajectory_merge() {
        let s = table_cup();
        let bank = TemplateBank::builtin();
        let pose = Pose::new(Vec3::new(-3.0, 0.0, 1.0), 0.0, 0.0);
        let v1 = vec![det(0, "table", 30, 1.0, [0.55, 0.3, 0.1])];
        let v2 = vec![det(1, "cup", 4, 0.95, [1.0, 1.0, 1.0])];
        let v3 = vec![det(0, "table", 30, 0.95, [0.55, 0.3, 0.1])];
        let single = caption_trajectory(&s, &[(pose, v1.clone())], &bank, 0.9, &mut ChaCha8Rng::seed_from_u64(3));
        let view = caption_view(&s, &pose, &v1, &bank, 0.9, &mut ChaCha8Rng::seed_from_u64(3)).join(" ");
        assert_eq!(single, view);
        let p = caption_trajectory(&s, &[(pose, v3), (pose, v2), (pose, v1)], &bank, 0.9, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(p.ends_with("There is also a white cup in the view."), "{p}");
        assert_eq!(best_view(&[vec![], vec![]], 0.9), Some(0));
    }

    #[test]
    fn lists_and_truncation() {
        assert_eq!(join_list(&["red cup".into()]), "a red cup");
        assert_eq!(join_list(&["red cup".into(), "orange ball".into()]), "a red cup and an orange ball");
        assert_eq!(join_list(&["x".into(), "y".into(), "z".into()]), "a x, a y, and a z");
        let long = vec!["word"; 100].join(" ");
        assert_eq!(truncate_tokens(&long, 77).split_whitespace().count(), 77);
    }
}
