//! Non-learned navigators: the image-split rule agent and a uniform random
//! agent.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use rand::Rng;

use crate::geometry::{look_at, wrap_angle, CameraIntrinsics, Pose, Vec3};
use crate::gridworld::{Action, EpisodeState, NavSpace, MAX_MOVE};
use crate::render::{render, Frame};
use crate::scenegen::Scene;

/// Move magnitude used by the rule agent for every translation.
pub const RULE_STEP: f64 = 0.8;

/// Instance-pixel counts over the upper/lower halves and left/middle/right
/// thirds of a frame. With an odd height the middle row is in neither half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegionCounts {
    pub upper: usize,
    pub lower: usize,
    pub left: usize,
    pub middle: usize,
    pub right: usize,
}

pub fn region_counts(frame: &Frame) -> RegionCounts {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut c = RegionCounts::default();
    for py in 0..h {
        for px in 0..w {
            if frame.instance[py * w + px].is_none() {
                continue;
            }
            if 2 * py + 1 < h {
                c.upper += 1;
            } else if 2 * py + 1 > h {
                c.lower += 1;
            }
            if 3 * px + 1 < w {
                c.left += 1;
            } else if 3 * px + 1 >= 2 * w {
                c.right += 1;
            } else {
                c.middle += 1;
            }
        }
    }
    c
}

/// Translation chosen from the current view: (forward/back, left/right, up/down).
pub fn rule_move(c: &RegionCounts) -> (f64, f64, f64) {
    let ud = match c.upper.cmp(&c.lower) {
        std::cmp::Ordering::Greater => RULE_STEP,
        std::cmp::Ordering::Less => -RULE_STEP,
        std::cmp::Ordering::Equal => 0.0,
    };
    let (fb, lr) = if c.middle >= c.left && c.middle >= c.right || c.left == c.right {
        (RULE_STEP, 0.0)
    } else if c.left > c.right {
        (0.0, RULE_STEP)
    } else {
        (0.0, -RULE_STEP)
    };
    (fb, lr, ud)
}

fn hit_centroid(frame: &Frame) -> Option<Vec3> {
    let mut sum = Vec3::ZERO;
    let mut n = 0usize;
    for py in 0..frame.height {
        for px in 0..frame.width {
            if let Some(p) = frame.hit_point(px, py) {
                sum = sum + p;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum * (1.0 / n as f64))
}

/// Best of the four quarter-turn headings at `position`, by instance pixel
/// area after re-aiming the elevation at the visible instances.
pub fn best_orientation(scene: &Scene, position: Vec3, heading: f64, elevation: f64, cam: &CameraIntrinsics) -> Pose {
    let mut best: Option<(usize, Pose)> = None;
    for k in 0..4 {
        let h = wrap_angle(heading + k as f64 * FRAC_PI_2);
        let pose = Pose::new(position, h, elevation);
        let frame = render(scene, &pose, cam);
        let aimed = match hit_centroid(&frame).and_then(|c| look_at(position, c, h).ok()) {
            Some((_, e)) => Pose::new(position, h, e),
            None => pose,
        };
        let area = if aimed == pose {
            frame.instance_pixels()
        } else {
            render(scene, &aimed, cam).instance_pixels()
        };
        if best.as_ref().map_or(true, |(a, _)| area > *a) {
            best = Some((area, aimed));
        }
    }
    best.map(|(_, p)| p).unwrap_or_else(|| Pose::new(position, heading, elevation))
}

/// Decides one step of the rule agent.
pub fn rule_action(scene: &Scene, nav: &NavSpace, pose: &Pose, cam: &CameraIntrinsics) -> Action {
    let frame = render(scene, pose, cam);
    if frame.instance_pixels() == 0 {
        return Action::from_signed(0.0, 0.0, 0.0, FRAC_PI_2, 0.0);
    }
    let (mut fb, lr, ud) = rule_move(&region_counts(&frame));
    if fb > 0.0 {
        let probe = nav.apply(pose, &Action::from_signed(fb, lr, ud, 0.0, 0.0));
        if render(scene, &probe, cam).visible_instance_count() < frame.visible_instance_count() {
            fb = -RULE_STEP;
        }
    }
    let moved = nav.apply(pose, &Action::from_signed(fb, lr, ud, 0.0, 0.0));
    let target = best_orientation(scene, moved.position, pose.heading, pose.elevation, cam);
    Action::from_signed(
        fb,
        lr,
        ud,
        wrap_angle(target.heading - pose.heading),
        target.elevation - pose.elevation,
    )
}

/// Runs the rule agent for exactly `max_steps` steps.
pub fn rule_navigate(scene: &Scene, nav: &NavSpace, start: Pose, cam: &CameraIntrinsics, max_steps: usize) -> EpisodeState {
    let mut state = EpisodeState::new(start, max_steps);
    while !state.done {
        let a = rule_action(scene, nav, &state.pose, cam);
        // A rule step never stops early, so an all-zero decision still
        // counts as a step: turn left instead.
        let a = if a.is_stop() { Action::from_signed(0.0, 0.0, 0.0, FRAC_PI_2, 0.0) } else { a };
        nav.step(&mut state, &a).expect("rule actions are valid");
    }
    state
}

/// A uniformly random non-stop action.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R) -> Action {
    loop {
        let mut comp = |limit: f64| -> f64 {
            match rng.gen_range(0..3) {
                0 => 0.0,
                s => {
                    let m = rng.gen_range(0.0..limit);
                    if m == 0.0 {
                        0.0
                    } else if s == 1 {
                        m
                    } else {
                        -m
                    }
                }
            }
        };
        let a = Action::from_signed(comp(MAX_MOVE), comp(MAX_MOVE), comp(MAX_MOVE), comp(PI), comp(FRAC_PI_4));
        if !a.is_stop() {
            return a;
        }
    }
}

/// Runs the random agent for exactly `max_steps` steps.
pub fn random_navigate<R: Rng + ?Sized>(nav: &NavSpace, start: Pose, max_steps: usize, rng: &mut R) -> EpisodeState {
    let mut state = EpisodeState::new(start, max_steps);
    while !state.done {
        let a = random_action(rng);
        nav.step(&mut state, &a).expect("random actions are valid");
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, GridIndex, grid_to_world};
    use crate::gridworld::replay;
    use crate::scenegen::{generate_scene, Catalog, Instance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame_with(w: u32, h: u32, on: impl Fn(u32, u32) -> bool) -> Frame {
        let n = (w * h) as usize;
        let mut instance = vec![None; n];
        for py in 0..h {
            for px in 0..w {
                if on(px, py) {
                    instance[(py * w + px) as usize] = Some(0);
                }
            }
        }
        Frame {
            width: w,
            height: h,
            pose: Pose::new(Vec3::ZERO, 0.0, 0.0),
            cam: CameraIntrinsics { width: w, height: h, vertical_fov: 1.0 },
            categories: vec!["box".into()],
            category: instance.iter().map(|i| if i.is_some() { 1 } else { 0 }).collect(),
            instance,
            rgb: vec![[0; 3]; n],
            depth: vec![1.0; n],
        }
    }

    #[test]
    fn upper_half_means_up() {
        let f = frame_with(12, 12, |_, py| py < 3);
        let (_, _, ud) = rule_move(&region_counts(&f));
        assert_eq!(ud, RULE_STEP);
        let f = frame_with(12, 12, |_, py| py > 8);
        assert_eq!(rule_move(&region_counts(&f)).2, -RULE_STEP);
    }

    #[test]
    fn symmetric_view_goes_forward() {
        let f = frame_with(12, 12, |px, py| (3..9).contains(&px) && (3..9).contains(&py));
        assert_eq!(rule_move(&region_counts(&f)), (RULE_STEP, 0.0, 0.0));
        let f = frame_with(12, 12, |px, _| px < 2 || px > 9);
        assert_eq!(rule_move(&region_counts(&f)), (RULE_STEP, 0.0, 0.0));
    }

    #[test]
    fn dominant_third_goes_sideways() {
        let f = frame_with(12, 12, |px, _| px < 4);
        assert_eq!(rule_move(&region_counts(&f)), (0.0, RULE_STEP, 0.0));
        let f = frame_with(12, 12, |px, _| px >= 8);
        assert_eq!(rule_move(&region_counts(&f)), (0.0, -RULE_STEP, 0.0));
    }

    #[test]
    fn thirds_partition_columns() {
        for w in [9u32, 10, 11, 128] {
            let f = frame_with(w, 1, |_, _| true);
            let c = region_counts(&f);
            assert_eq!(c.left + c.middle + c.right, w as usize);
            assert!(c.left.abs_diff(c.right) <= 1);
        }
    }

    #[test]
    fn empty_view_turns_left() {
        let scene = Scene::from_instances(
            "t",
            0,
            vec![Instance {
                asset_id: "a".into(),
                category: "box".into(),
                bbox: Aabb::new(Vec3::new(-0.5, -0.5, 0.0), Vec3::new(0.5, 0.5, 1.0)),
                yaw: 0.0,
                color: [0.5; 3],
            }],
        );
        let nav = NavSpace::new(&scene);
        let cam = CameraIntrinsics::new(16, 16, 1.0).unwrap();
        let pose = Pose::new(Vec3::new(-3.0, 0.0, 1.0), PI - 0.01, 0.0);
        let a = rule_action(&scene, &nav, &pose, &cam);
        assert_eq!(a.signed(), [0.0, 0.0, 0.0, FRAC_PI_2, 0.0]);
    }

    #[test]
    fn rule_agent_runs_fixed_length_and_replays() {
        let scene = generate_scene(4, &Catalog::builtin()).unwrap();
        let nav = NavSpace::new(&scene);
        let cam = CameraIntrinsics::new(24, 24, 1.0).unwrap();
        let g = nav.navigable().find(|g| g.k == 3 && g.i == 2).unwrap_or(GridIndex::new(0, 0, 3).unwrap());
        let start = Pose::looking_at(grid_to_world(g).unwrap(), scene.center, 0.0).unwrap();
        let a = rule_navigate(&scene, &nav, start, &cam, 12);
        let b = rule_navigate(&scene, &nav, start, &cam, 12);
        assert_eq!(a, b);
        assert_eq!(a.action_history.len(), 12);
        assert!(a.action_history.iter().all(|x| !x.is_stop()));
        let r = replay(&nav, start, &a.action_history, 12).unwrap();
        assert_eq!(r.pose_history, a.pose_history);
        assert!(a.pose_history.iter().all(|p| nav.is_free(p.position)));
    }

    #[test]
    fn random_agent_is_seeded() {
        let scene = generate_scene(4, &Catalog::builtin()).unwrap();
        let nav = NavSpace::new(&scene);
        let start = Pose::new(Vec3::new(-3.6, -3.6, 1.2), 0.0, 0.0);
        let a = random_navigate(&nav, start, 12, &mut ChaCha8Rng::seed_from_u64(1));
        let b = random_navigate(&nav, start, 12, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert_eq!(a.action_history.len(), 12);
        assert!(a.action_history.iter().all(|x| x.validate().is_ok()));
    }
}
