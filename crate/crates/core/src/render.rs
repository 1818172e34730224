//! Ray-casting renderer over instance boxes.
//!
//! Every pixel casts one pinhole ray and keeps the nearest slab hit; ties go
//! to the lower instance index. Shading is flat Lambert against the view ray
//! with a 0.3 floor. Output is deterministic for identical inputs.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{camera_ray, ray_aabb_hit, Aabb, CameraIntrinsics, Pose, Vec3};
use crate::scenegen::Scene;

pub const BACKGROUND_RGB: [u8; 3] = [217, 217, 217];
pub const SHADE_FLOOR: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub pose: Pose,
    pub cam: CameraIntrinsics,
    /// Category table for this scene; category id `c + 1` is `categories[c]`.
    pub categories: Vec<String>,
    pub instance: Vec<Option<u16>>,
    /// 0 is background.
    pub category: Vec<u16>,
    pub rgb: Vec<[u8; 3]>,
    /// Hit distance in metres; infinite for background.
    pub depth: Vec<f64>,
}

impl Frame {
    pub fn pixel_count(&self) -> usize {
        self.instance.len()
    }

    pub fn index(&self, px: u32, py: u32) -> usize {
        py as usize * self.width as usize + px as usize
    }

    pub fn category_name(&self, id: u16) -> Option<&str> {
        if id == 0 {
            None
        } else {
            self.categories.get(id as usize - 1).map(String::as_str)
        }
    }

    pub fn instance_pixels(&self) -> usize {
        self.instance.iter().filter(|i| i.is_some()).count()
    }

    /// Number of distinct instances with at least one pixel.
    pub fn visible_instance_count(&self) -> usize {
        let mut seen: Vec<u16> = self.instance.iter().flatten().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// World-space hit point of a pixel, if it shows an instance.
    pub fn hit_point(&self, px: u32, py: u32) -> Option<Vec3> {
        let idx = self.index(px, py);
        self.instance[idx]?;
        Some(camera_ray(&self.pose, &self.cam, px, py).at(self.depth[idx]))
    }

    /// RGB bytes, row-major.
    pub fn rgb_bytes(&self) -> Vec<u8> {
        self.rgb.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn write_png<W: Write>(&self, w: W) -> Result<(), png::EncodingError> {
        let mut enc = png::Encoder::new(w, self.width, self.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.rgb_bytes())?;
        writer.finish()
    }

    pub fn png_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_png(&mut out).expect("in-memory png encoding");
        out
    }

    /// Category grid as row-major little-endian u16 values.
    pub fn category_grid_le(&self) -> Vec<u8> {
        self.category.iter().flat_map(|c| c.to_le_bytes()).collect()
    }
}

/// Decodes an 8-bit RGB PNG into (width, height, bytes).
pub fn decode_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), png::DecodingError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, buf))
}

fn shade(color: [f64; 3], factor: f64) -> [u8; 3] {
    let q = |c: f64| ((c * factor).clamp(0.0, 1.0) * 255.0).round() as u8;
    [q(color[0]), q(color[1]), q(color[2])]
}

/// Nearest instance hit along one ray: (instance index, t, entry axis).
fn nearest_hit(ray: &crate::geometry::Ray, boxes: &[Aabb]) -> Option<(usize, f64, Option<usize>)> {
    let mut best: Option<(usize, f64, Option<usize>)> = None;
    for (n, b) in boxes.iter().enumerate() {
        if let Some((t, axis)) = ray_aabb_hit(ray, b) {
            if best.is_none_or(|(_, bt, _)| t < bt) {
                best = Some((n, t, axis));
            }
        }
    }
    best
}

pub fn render(scene: &Scene, pose: &Pose, cam: &CameraIntrinsics) -> Frame {
    let categories = scene.categories();
    let cat_ids: Vec<u16> = scene
        .instances
        .iter()
        .map(|i| categories.iter().position(|c| *c == i.category).unwrap() as u16 + 1)
        .collect();
    let boxes: Vec<Aabb> = scene.boxes().copied().collect();
    let w = cam.width as usize;
    let pixels: Vec<(Option<u16>, u16, [u8; 3], f64)> = (0..cam.pixel_count())
        .into_par_iter()
        .map(|idx| {
            let (px, py) = ((idx % w) as u32, (idx / w) as u32);
            let ray = camera_ray(pose, cam, px, py);
            match nearest_hit(&ray, &boxes) {
                Some((n, t, axis)) => {
                    let factor = axis.map_or(1.0, |a| ray.direction.axis(a).abs()).max(SHADE_FLOOR);
                    (Some(n as u16), cat_ids[n], shade(scene.instances[n].color, factor), t)
                }
                None => (None, 0, BACKGROUND_RGB, f64::INFINITY),
            }
        })
        .collect();
    let mut frame = Frame {
        width: cam.width,
        height: cam.height,
        pose: *pose,
        cam: *cam,
        categories,
        instance: Vec::with_capacity(pixels.len()),
        category: Vec::with_capacity(pixels.len()),
        rgb: Vec::with_capacity(pixels.len()),
        depth: Vec::with_capacity(pixels.len()),
    };
    for (i, c, rgb, d) in pixels {
        frame.instance.push(i);
        frame.category.push(c);
        frame.rgb.push(rgb);
        frame.depth.push(d);
    }
    frame
}

/// Per-category pixel counts of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegStats {
    pub counts: BTreeMap<String, usize>,
    pub background: usize,
    pub total: usize,
}

impl SegStats {
    /// Area ratio of a category; zero when absent.
    pub fn ratio(&self, category: &str) -> f64 {
        self.counts.get(category).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    pub fn ratios(&self) -> BTreeMap<String, f64> {
        self.counts
            .iter()
            .map(|(k, &v)| (k.clone(), v as f64 / self.total as f64))
            .collect()
    }

    pub fn background_fraction(&self) -> f64 {
        self.background as f64 / self.total as f64
    }
}

pub fn seg_stats(frame: &Frame) -> SegStats {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut background = 0;
    for &c in &frame.category {
        match frame.category_name(c) {
            Some(name) => *counts.entry(name.to_string()).or_default() += 1,
            None => background += 1,
        }
    }
    SegStats {
        counts,
        background,
        total: frame.pixel_count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    /// Inclusive.
    pub x1: u32,
    /// Inclusive.
    pub y1: u32,
}

impl PixelRect {
    pub fn area(&self) -> u64 {
        (self.x1 - self.x0 + 1) as u64 * (self.y1 - self.y0 + 1) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub instance_index: usize,
    pub category: String,
    pub bbox: PixelRect,
    pub visible_pixels: usize,
    /// Visible pixels over the pixels the instance covers when rendered alone.
    pub confidence: f64,
    pub mean_rgb: [f64; 3],
}

/// Ground-truth detections for every instance with at least one visible pixel,
/// in instance order.
pub fn detect(scene: &Scene, pose: &Pose, cam: &CameraIntrinsics) -> Vec<Detection> {
    detect_in_frame(scene, &render(scene, pose, cam))
}

/// Detections for an already rendered frame of `scene`.
pub fn detect_in_frame(scene: &Scene, frame: &Frame) -> Vec<Detection> {
    let n = scene.instances.len();
    let mut visible = vec![0usize; n];
    let mut rect: Vec<Option<PixelRect>> = vec![None; n];
    let mut rgb_sum = vec![[0u64; 3]; n];
    for py in 0..frame.height {
        for px in 0..frame.width {
            let idx = frame.index(px, py);
            if let Some(i) = frame.instance[idx] {
                let i = i as usize;
                visible[i] += 1;
                for (s, v) in rgb_sum[i].iter_mut().zip(frame.rgb[idx]) {
                    *s += v as u64;
                }
                rect[i] = Some(match rect[i] {
                    None => PixelRect { x0: px, y0: py, x1: px, y1: py },
                    Some(r) => PixelRect {
                        x0: r.x0.min(px),
                        y0: r.y0.min(py),
                        x1: r.x1.max(px),
                        y1: r.y1.max(py),
                    },
                });
            }
        }
    }
    (0..n)
        .filter(|&i| visible[i] > 0)
        .map(|i| {
            let solo = solo_pixels(&scene.instances[i].bbox, &frame.pose, &frame.cam);
            let v = visible[i] as f64;
            Detection {
                instance_index: i,
                category: scene.instances[i].category.clone(),
                bbox: rect[i].unwrap(),
                visible_pixels: visible[i],
                confidence: (v / solo.max(visible[i]) as f64).min(1.0),
                mean_rgb: rgb_sum[i].map(|s| s as f64 / v / 255.0),
            }
        })
        .collect()
}

/// Pixels a single box covers with nothing else in the scene.
pub fn solo_pixels(b: &Aabb, pose: &Pose, cam: &CameraIntrinsics) -> usize {
    let w = cam.width;
    (0..cam.pixel_count())
        .into_par_iter()
        .filter(|&idx| {
            let ray = camera_ray(pose, cam, idx as u32 % w, idx as u32 / w);
            ray_aabb_hit(&ray, b).is_some()
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ray_aabb;
    use crate::scenegen::{Instance, Scene};

    pub(crate) fn box_scene(boxes: &[(&str, Aabb)]) -> Scene {
        let instances = boxes
            .iter()
            .enumerate()
            .map(|(n, (cat, b))| Instance {
                asset_id: format!("{cat}_{n}"),
                category: cat.to_string(),
                bbox: *b,
                yaw: 0.0,
                color: [0.8, 0.2, 0.1],
            })
            .collect();
        Scene::from_instances("t", 0, instances)
    }

    fn cube(c: Vec3, half: f64) -> Aabb {
        Aabb::from_center_size(c, Vec3::new(2.0 * half, 2.0 * half, 2.0 * half))
    }

    #[test]
    fn empty_scene_is_background() {
        let f = render(&box_scene(&[]), &Pose::new(Vec3::new(0.0, 0.0, 1.0), 0.0, 0.0), &CameraIntrinsics::default());
        assert!(f.instance.iter().all(Option::is_none));
        assert!(f.rgb.iter().all(|p| *p == BACKGROUND_RGB));
        assert!(seg_stats(&f).counts.is_empty());
    }

    #[test]
    fn center_pixel_depth_to_near_face() {
        let scene = box_scene(&[("box", cube(Vec3::new(2.5, 0.0, 1.0), 0.5))]);
        let cam = CameraIntrinsics::new(129, 129, 1.0).unwrap();
        let f = render(&scene, &Pose::new(Vec3::new(0.0, 0.0, 1.0), 0.0, 0.0), &cam);
        let idx = f.index(64, 64);
        assert_eq!(f.instance[idx], Some(0));
        assert!((f.depth[idx] - 2.0).abs() < 1e-12);
        // head-on face gets full shading
        assert_eq!(f.rgb[idx], [204, 51, 26]);
        assert_eq!(f.category_name(f.category[idx]), Some("box"));
    }

    #[test]
    fn nearer_box_wins() {
        let scene = box_scene(&[
            ("far", cube(Vec3::new(3.0, 0.0, 1.0), 0.5)),
            ("near", cube(Vec3::new(1.5, 0.0, 1.0), 0.2)),
        ]);
        let cam = CameraIntrinsics::new(33, 33, 1.0).unwrap();
        let f = render(&scene, &Pose::new(Vec3::new(0.0, 0.0, 1.0), 0.0, 0.0), &cam);
        assert_eq!(f.instance[f.index(16, 16)], Some(1));
    }

    #[test]
    fn seg_stats_counting() {
        let cam = CameraIntrinsics::new(16, 16, 1.0).unwrap();
        let mut f = render(&box_scene(&[]), &Pose::new(Vec3::ZERO, 0.0, 0.0), &cam);
        f.categories = vec!["table".into(), "cup".into()];
        for idx in 0..64 {
            f.category[idx] = 1;
        }
        let s = seg_stats(&f);
        assert_eq!(s.ratio("table"), 0.25);
        assert_eq!(s.ratios().len(), 1);
        for idx in 64..96 {
            f.category[idx] = 2;
        }
        let s = seg_stats(&f);
        assert_eq!(s.ratio("cup"), 0.125);
        assert_eq!(s.counts.values().sum::<usize>() + s.background, s.total);
    }

    #[test]
    fn same_category_ratios_sum() {
        let scene = box_scene(&[
            ("cup", cube(Vec3::new(2.0, -0.5, 1.0), 0.2)),
            ("cup", cube(Vec3::new(2.0, 0.5, 1.0), 0.2)),
        ]);
        let f = render(&scene, &Pose::new(Vec3::new(0.0, 0.0, 1.0), 0.0, 0.0), &CameraIntrinsics::default());
        let s = seg_stats(&f);
        let px: usize = f.instance.iter().filter(|i| i.is_some()).count();
        assert_eq!(s.counts["cup"], px);
        let per: Vec<usize> = (0..2u16).map(|n| f.instance.iter().filter(|i| **i == Some(n)).count()).collect();
        assert!(per[0] > 0 && per[1] > 0);
        assert_eq!(per[0] + per[1], s.counts["cup"]);
    }

    #[test]
    fn detection_confidence() {
        let cam = CameraIntrinsics::default();
        let pose = Pose::new(Vec3::new(0.0, 0.0, 1.0), 0.0, 0.0);
        // unoccluded
        let scene = box_scene(&[("box", cube(Vec3::new(3.0, 0.0, 1.0), 0.3))]);
        let d = detect(&scene, &pose, &cam);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].confidence, 1.0);
        // off-screen instance behind the camera is absent
        let scene = box_scene(&[
            ("box", cube(Vec3::new(3.0, 0.0, 1.0), 0.3)),
            ("hidden", cube(Vec3::new(-3.0, 0.0, 1.0), 0.3)),
        ]);
        let d = detect(&scene, &pose, &cam);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].instance_index, 0);
    }

    #[test]
    fn half_occluded_detection() {
        // far box centered on the axis; a closer, taller occluder covers exactly
        // the image half with y > 0 (left half of the image).
        let cam = CameraIntrinsics::default();
        let pose = Pose::new(Vec3::new(0.0, 0.0, 1.0), 0.0, 0.0);
        let far = cube(Vec3::new(3.0, 0.0, 1.0), 0.3);
        let occluder = Aabb::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.2, 2.0, 3.0));
        let scene = box_scene(&[("far", far), ("occ", occluder)]);
        let d = detect(&scene, &pose, &cam);
        let far_det = d.iter().find(|d| d.instance_index == 0).unwrap();
        let solo = solo_pixels(&far, &pose, &cam) as f64;
        assert!((far_det.confidence - 0.5).abs() <= 1.0 / solo + 1e-12, "{}", far_det.confidence);
        assert!(far_det.bbox.x0 >= 64);
    }

    #[test]
    fn exhaustive_oracle_agreement() {
        use crate::scenegen::{generate_scene, Catalog};
        use crate::geometry::{GridIndex, lattice_point};
        let catalog = Catalog::builtin();
        let cam = CameraIntrinsics::default();
        for seed in 0..5u64 {
            let scene = generate_scene(seed, &catalog).unwrap();
            let pos = lattice_point(GridIndex { i: 3 + seed as usize, j: 2, k: 5 });
            let pose = Pose::looking_at(pos, scene.center, 0.0).unwrap();
            let f = render(&scene, &pose, &cam);
            for py in (0..128).step_by(7) {
                for px in (0..128).step_by(5) {
                    let ray = camera_ray(&pose, &cam, px, py);
                    let ts: Vec<Option<f64>> = scene.boxes().map(|b| ray_aabb(&ray, b)).collect();
                    let mut best: Option<(usize, f64)> = None;
                    for (n, t) in ts.iter().enumerate() {
                        if let Some(t) = t {
                            if best.is_none_or(|(_, bt)| *t < bt) {
                                best = Some((n, *t));
                            }
                        }
                    }
                    let idx = f.index(px, py);
                    assert_eq!(f.instance[idx].map(|i| i as usize), best.map(|b| b.0));
                    if let Some((_, t)) = best {
                        assert_eq!(f.depth[idx], t);
                    }
                }
            }
        }
    }

    #[test]
    fn png_and_raw_exports() {
        let scene = box_scene(&[("box", cube(Vec3::new(3.0, 0.0, 1.0), 0.3))]);
        let cam = CameraIntrinsics::new(32, 24, 1.0).unwrap();
        let f = render(&scene, &Pose::new(Vec3::new(0.0, 0.0, 1.0), 0.0, 0.0), &cam);
        let (w, h, bytes) = decode_png(&f.png_bytes()).unwrap();
        assert_eq!((w, h), (32, 24));
        assert_eq!(bytes, f.rgb_bytes());
        let raw = f.category_grid_le();
        assert_eq!(raw.len(), 32 * 24 * 2);
        let center = f.index(16, 12) * 2;
        assert_eq!(u16::from_le_bytes([raw[center], raw[center + 1]]), 1);
        assert_eq!(render(&scene, &f.pose, &cam), f);
    }
}
