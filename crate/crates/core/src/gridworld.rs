//! Navigation space, the five-component action model and episode stepping.
//!
//! Moves are expressed in the heading-only (yaw) frame of the pose at the
//! start of a step: forward along the heading in the horizontal plane, left
//! perpendicular to it, up along world z. Rotations change heading (wrapped)
//! and elevation (clamped). A move that would enter an inflated instance box
//! stops at the last free 0.1 m sample along its straight segment.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    clamp_to_environment, lattice_point, wrap_angle, Aabb, GridIndex, Pose, Vec3, GRID_POINTS,
};
use crate::scenegen::Scene;

/// Clearance kept between the camera and instance geometry.
pub const AGENT_RADIUS: f64 = 0.2;
/// Largest move magnitude along a single body axis.
pub const MAX_MOVE: f64 = 1.6;
/// Collision sampling interval along a move segment.
pub const SAMPLE_STEP: f64 = 0.1;
pub const DEFAULT_MAX_STEPS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error("{component}: direction {dir} is not one of -1, 0, 1")]
    BadDirection { component: &'static str, dir: f64 },
    #[error("{component}: stop direction requires zero magnitude, got {magnitude}")]
    StopWithMagnitude { component: &'static str, magnitude: f64 },
    #[error("{component}: non-stop direction requires a positive magnitude")]
    MissingMagnitude { component: &'static str },
    #[error("{component}: magnitude {magnitude} out of range")]
    MagnitudeRange { component: &'static str, magnitude: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("episode is done")]
    Done,
    #[error(transparent)]
    Action(#[from] ActionError),
}

macro_rules! direction_enum {
    ($name:ident, $pos:ident = $pos_s:literal, $neg:ident = $neg_s:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            #[default]
            Stop,
            $pos,
            $neg,
        }

        impl $name {
            pub fn sign(self) -> f64 {
                match self {
                    $name::Stop => 0.0,
                    $name::$pos => 1.0,
                    $name::$neg => -1.0,
                }
            }

            pub fn from_sign(s: f64) -> Option<Self> {
                if s == 0.0 {
                    Some($name::Stop)
                } else if s == 1.0 {
                    Some($name::$pos)
                } else if s == -1.0 {
                    Some($name::$neg)
                } else {
                    None
                }
            }

            pub fn label(self) -> &'static str {
                match self {
                    $name::Stop => "stop",
                    $name::$pos => $pos_s,
                    $name::$neg => $neg_s,
                }
            }
        }
    };
}

direction_enum!(FbDir, Forward = "forward", Backward = "backward");
direction_enum!(LrDir, Left = "left", Right = "right");
direction_enum!(UdDir, Up = "up", Down = "down");

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Move<D> {
    pub dir: D,
    /// Metres.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rotate<D> {
    pub dir: D,
    /// Radians.
    pub angle: f64,
}

/// One step of the action model: three body-frame moves and two rotations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub move_fb: Move<FbDir>,
    pub move_lr: Move<LrDir>,
    pub move_ud: Move<UdDir>,
    pub rot_heading: Rotate<LrDir>,
    pub rot_elevation: Rotate<UdDir>,
}

impl Action {
    pub fn stop() -> Self {
        Self::default()
    }

    pub fn is_stop(&self) -> bool {
        self.signs() == [0.0; 5]
    }

    /// Signed directions in the order fb, lr, ud, heading, elevation.
    pub fn signs(&self) -> [f64; 5] {
        [
            self.move_fb.dir.sign(),
            self.move_lr.dir.sign(),
            self.move_ud.dir.sign(),
            self.rot_heading.dir.sign(),
            self.rot_elevation.dir.sign(),
        ]
    }

    pub fn amounts(&self) -> [f64; 5] {
        [
            self.move_fb.magnitude,
            self.move_lr.magnitude,
            self.move_ud.magnitude,
            self.rot_heading.angle,
            self.rot_elevation.angle,
        ]
    }

    /// Builds an action from signed body-frame components (metres / radians).
    /// Positive means forward, left, up, turn left, tilt up.
    pub fn from_signed(fb: f64, lr: f64, ud: f64, heading: f64, elevation: f64) -> Self {
        let split = |v: f64| -> (f64, f64) {
            if v == 0.0 {
                (0.0, 0.0)
            } else {
                (v.signum(), v.abs())
            }
        };
        let (s0, m0) = split(fb);
        let (s1, m1) = split(lr);
        let (s2, m2) = split(ud);
        let (s3, m3) = split(heading);
        let (s4, m4) = split(elevation);
        Action {
            move_fb: Move { dir: FbDir::from_sign(s0).unwrap(), magnitude: m0 },
            move_lr: Move { dir: LrDir::from_sign(s1).unwrap(), magnitude: m1 },
            move_ud: Move { dir: UdDir::from_sign(s2).unwrap(), magnitude: m2 },
            rot_heading: Rotate { dir: LrDir::from_sign(s3).unwrap(), angle: m3 },
            rot_elevation: Rotate { dir: UdDir::from_sign(s4).unwrap(), angle: m4 },
        }
    }

    /// Signed components in the same order as [`Action::from_signed`].
    pub fn signed(&self) -> [f64; 5] {
        let s = self.signs();
        let a = self.amounts();
        [s[0] * a[0], s[1] * a[1], s[2] * a[2], s[3] * a[3], s[4] * a[4]]
    }

    pub fn validate(&self) -> Result<(), ActionError> {
        const NAMES: [&str; 5] = ["move_fb", "move_lr", "move_ud", "rot_heading", "rot_elevation"];
        let signs = self.signs();
        let amounts = self.amounts();
        for c in 0..5 {
            let (s, m) = (signs[c], amounts[c]);
            let component = NAMES[c];
            if !m.is_finite() || m < 0.0 || (c < 3 && m > MAX_MOVE) {
                return Err(ActionError::MagnitudeRange { component, magnitude: m });
            }
            if s == 0.0 && m != 0.0 {
                return Err(ActionError::StopWithMagnitude { component, magnitude: m });
            }
            if s != 0.0 && m == 0.0 {
                return Err(ActionError::MissingMagnitude { component });
            }
        }
        Ok(())
    }
}

/// Flat encoding: five signed directions then five normalized magnitudes
/// (moves divided by 1.6 m, angles divided by pi).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVec10(pub [f64; 10]);

const COMPONENT_SCALE: [f64; 5] = [MAX_MOVE, MAX_MOVE, MAX_MOVE, PI, PI];

pub fn action_to_vec10(a: &Action) -> Result<ActionVec10, ActionError> {
    a.validate()?;
    let mut v = [0.0; 10];
    let signs = a.signs();
    let amounts = a.amounts();
    for c in 0..5 {
        v[c] = signs[c];
        v[5 + c] = amounts[c] / COMPONENT_SCALE[c];
    }
    Ok(ActionVec10(v))
}

pub fn vec10_to_action(v: &ActionVec10) -> Result<Action, ActionError> {
    const NAMES: [&str; 5] = ["move_fb", "move_lr", "move_ud", "rot_heading", "rot_elevation"];
    let mut signed = [0.0; 5];
    for c in 0..5 {
        let dir = v.0[c];
        let mag = v.0[5 + c];
        let component = NAMES[c];
        if !(dir == 0.0 || dir == 1.0 || dir == -1.0) {
            return Err(ActionError::BadDirection { component, dir });
        }
        if !mag.is_finite() || mag < 0.0 || (c < 3 && mag > 1.0) {
            return Err(ActionError::MagnitudeRange { component, magnitude: mag });
        }
        if dir == 0.0 && mag != 0.0 {
            return Err(ActionError::StopWithMagnitude { component, magnitude: mag });
        }
        if dir != 0.0 && mag == 0.0 {
            return Err(ActionError::MissingMagnitude { component });
        }
        signed[c] = dir * mag * COMPONENT_SCALE[c];
    }
    let a = Action::from_signed(signed[0], signed[1], signed[2], signed[3], signed[4]);
    a.validate()?;
    Ok(a)
}

/// Yaw-frame move basis: (forward, right, up).
pub fn move_basis(heading: f64) -> (Vec3, Vec3, Vec3) {
    let (s, c) = heading.sin_cos();
    (Vec3::new(c, s, 0.0), Vec3::new(s, -c, 0.0), Vec3::new(0.0, 0.0, 1.0))
}

/// World displacement of an action's moves under the given heading.
pub fn displacement(action: &Action, heading: f64) -> Vec3 {
    let (fwd, right, up) = move_basis(heading);
    let s = action.signed();
    fwd * s[0] - right * s[1] + up * s[2]
}

/// Signed (fb, lr, ud) components of a world displacement in the yaw frame.
pub fn decompose(d: Vec3, heading: f64) -> (f64, f64, f64) {
    let (fwd, right, _) = move_basis(heading);
    (d.dot(fwd), -d.dot(right), d.z)
}

/// Lattice occupancy for one scene.
#[derive(Debug, Clone)]
pub struct NavSpace {
    occupied: Vec<bool>,
    obstacles: Vec<Aabb>,
    center: Vec3,
}

pub fn build_navspace(scene: &Scene) -> NavSpace {
    NavSpace::with_inflation(scene, AGENT_RADIUS)
}

impl NavSpace {
    pub fn new(scene: &Scene) -> Self {
        build_navspace(scene)
    }

    pub fn with_inflation(scene: &Scene, radius: f64) -> Self {
        let obstacles: Vec<Aabb> = scene.boxes().map(|b| b.inflate(radius)).collect();
        let occupied = (0..GRID_POINTS)
            .map(|idx| {
                let p = lattice_point(GridIndex::from_flat(idx));
                obstacles.iter().any(|b| b.contains_strict(p))
            })
            .collect();
        Self {
            occupied,
            obstacles,
            center: scene.center,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn obstacles(&self) -> &[Aabb] {
        &self.obstacles
    }

    pub fn is_navigable(&self, g: GridIndex) -> bool {
        g.validate().is_ok() && !self.occupied[g.flat()]
    }

    pub fn navigable_count(&self) -> usize {
        self.occupied.iter().filter(|o| !**o).count()
    }

    pub fn navigable(&self) -> impl Iterator<Item = GridIndex> + '_ {
        GridIndex::all().filter(|g| !self.occupied[g.flat()])
    }

    pub fn is_free(&self, p: Vec3) -> bool {
        !self.obstacles.iter().any(|b| b.contains_strict(p))
    }

    /// Walks the straight segment from `from` to `to` in 0.1 m samples and
    /// returns the last free sample (the endpoint itself when nothing blocks).
    pub fn truncate_segment(&self, from: Vec3, to: Vec3) -> Vec3 {
        let d = to - from;
        let len = d.norm();
        if len == 0.0 {
            return to;
        }
        let unit = d * (1.0 / len);
        let n = (len / SAMPLE_STEP).ceil() as usize;
        let mut last = from;
        for i in 1..=n {
            let t = i as f64 / 10.0;
            let p = if i == n || t >= len { to } else { from + unit * t };
            if !self.is_free(p) {
                return last;
            }
            last = p;
        }
        to
    }

    pub fn segment_is_free(&self, from: Vec3, to: Vec3) -> bool {
        self.truncate_segment(from, to) == to
    }

    /// Applies an action to a pose without episode bookkeeping.
    pub fn apply(&self, pose: &Pose, action: &Action) -> Pose {
        let target = clamp_to_environment(pose.position + displacement(action, pose.heading));
        let position = self.truncate_segment(pose.position, target);
        let s = action.signed();
        Pose {
            position,
            heading: wrap_angle(pose.heading + s[3]),
            elevation: (pose.elevation + s[4]).clamp(-FRAC_PI_2, FRAC_PI_2),
        }
    }

    /// Advances an episode by one action.
    pub fn step(&self, state: &mut EpisodeState, action: &Action) -> Result<(), StepError> {
        if state.done {
            return Err(StepError::Done);
        }
        action.validate()?;
        state.pose = self.apply(&state.pose, action);
        state.step_count += 1;
        state.pose_history.push(state.pose);
        state.action_history.push(*action);
        state.done = action.is_stop() || state.step_count >= state.max_steps;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub pose: Pose,
    pub step_count: usize,
    pub done: bool,
    pub max_steps: usize,
    /// Every pose visited, starting with the initial pose.
    pub pose_history: Vec<Pose>,
    pub action_history: Vec<Action>,
}

impl EpisodeState {
    pub fn new(start: Pose, max_steps: usize) -> Self {
        Self {
            pose: start,
            step_count: 0,
            done: false,
            max_steps,
            pose_history: vec![start],
            action_history: Vec::new(),
        }
    }
}

/// Replays `actions` from `start` until the list ends or the episode is done.
pub fn replay(nav: &NavSpace, start: Pose, actions: &[Action], max_steps: usize) -> Result<EpisodeState, StepError> {
    let mut state = EpisodeState::new(start, max_steps);
    for a in actions {
        if state.done {
            break;
        }
        nav.step(&mut state, a)?;
    }
    Ok(state)
}
