//! Geometry primitives shared by every module: vectors, lattice indexing,
//! camera poses, axis-aligned boxes and ray queries.
//!
//! World frame: z up, scene center at x = y = 0, ground at z = 0. The
//! navigable environment is the box [-4, 4] x [-4, 4] x [0, 4] metres,
//! discretized as a lattice of 21 x 21 x 11 viewpoints spaced 0.4 m apart.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half extent of the environment along x and y.
pub const ENV_HALF_EXTENT: f64 = 4.0;
/// Height of the environment.
pub const ENV_HEIGHT: f64 = 4.0;
/// Lattice spacing in metres.
pub const CELL_SIZE: f64 = 0.4;
/// Lattice points along x.
pub const GRID_NX: usize = 21;
/// Lattice points along y.
pub const GRID_NY: usize = 21;
/// Lattice points along z.
pub const GRID_NZ: usize = 11;
/// Total number of lattice points.
pub const GRID_POINTS: usize = GRID_NX * GRID_NY * GRID_NZ;

const BOUNDS_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("grid index ({i}, {j}, {k}) is outside the lattice")]
    IndexOutOfRange { i: i64, j: i64, k: i64 },
    #[error("point ({x}, {y}, {z}) lies outside the environment")]
    OutsideEnvironment { x: f64, y: f64, z: f64 },
    #[error("look-at source and target coincide")]
    DegenerateLookAt,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Returns the unit vector in the same direction; the zero vector maps to itself.
    pub fn normalize(self) -> Vec3 {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            self * (1.0 / n)
        }
    }

    pub fn manhattan(self, o: Vec3) -> f64 {
        (self.x - o.x).abs() + (self.y - o.y).abs() + (self.z - o.z).abs()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn axis(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn with_axis(mut self, axis: usize, value: f64) -> Vec3 {
        match axis {
            0 => self.x = value,
            1 => self.y = value,
            _ => self.z = value,
        }
        self
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A lattice viewpoint index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl GridIndex {
    pub fn new(i: usize, j: usize, k: usize) -> Result<Self, GeometryError> {
        let g = Self { i, j, k };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(self) -> Result<(), GeometryError> {
        if self.i < GRID_NX && self.j < GRID_NY && self.k < GRID_NZ {
            Ok(())
        } else {
            Err(GeometryError::IndexOutOfRange {
                i: self.i as i64,
                j: self.j as i64,
                k: self.k as i64,
            })
        }
    }

    /// Row-major flat index, `k` fastest.
    pub fn flat(self) -> usize {
        (self.i * GRID_NY + self.j) * GRID_NZ + self.k
    }

    pub fn from_flat(idx: usize) -> Self {
        let k = idx % GRID_NZ;
        let j = (idx / GRID_NZ) % GRID_NY;
        let i = idx / (GRID_NZ * GRID_NY);
        Self { i, j, k }
    }

    /// Iterates over every lattice point in flat-index order.
    pub fn all() -> impl Iterator<Item = GridIndex> {
        (0..GRID_POINTS).map(GridIndex::from_flat)
    }

    /// In-range 6-connected neighbours.
    pub fn neighbors(self) -> impl Iterator<Item = GridIndex> {
        const STEPS: [(i64, i64, i64); 6] = [
            (1, 0, 0),
            (-1, 0, 0),
            (0, 1, 0),
            (0, -1, 0),
            (0, 0, 1),
            (0, 0, -1),
        ];
        STEPS.into_iter().filter_map(move |(di, dj, dk)| {
            let i = self.i as i64 + di;
            let j = self.j as i64 + dj;
            let k = self.k as i64 + dk;
            let in_range = (0..GRID_NX as i64).contains(&i)
                && (0..GRID_NY as i64).contains(&j)
                && (0..GRID_NZ as i64).contains(&k);
            in_range.then(|| GridIndex {
                i: i as usize,
                j: j as usize,
                k: k as usize,
            })
        })
    }
}

/// Maps a lattice index to its world position.
pub fn grid_to_world(g: GridIndex) -> Result<Vec3, GeometryError> {
    g.validate()?;
    Ok(lattice_point(g))
}

/// Infallible variant for indices already known to be in range.
pub(crate) fn lattice_point(g: GridIndex) -> Vec3 {
    Vec3::new(
        -ENV_HALF_EXTENT + CELL_SIZE * g.i as f64,
        -ENV_HALF_EXTENT + CELL_SIZE * g.j as f64,
        CELL_SIZE * g.k as f64,
    )
}

/// Nearest lattice point to `p`; exact ties round toward the lower index.
pub fn world_to_grid(p: Vec3) -> Result<GridIndex, GeometryError> {
    if !inside_environment(p) {
        return Err(GeometryError::OutsideEnvironment {
            x: p.x,
            y: p.y,
            z: p.z,
        });
    }
    let round = |v: f64, n: usize| -> usize {
        let f = v / CELL_SIZE;
        let lo = f.floor();
        let r = if f - lo > 0.5 { lo + 1.0 } else { lo };
        (r.max(0.0) as usize).min(n - 1)
    };
    Ok(GridIndex {
        i: round(p.x + ENV_HALF_EXTENT, GRID_NX),
        j: round(p.y + ENV_HALF_EXTENT, GRID_NY),
        k: round(p.z, GRID_NZ),
    })
}

pub fn inside_environment(p: Vec3) -> bool {
    p.is_finite()
        && p.x.abs() <= ENV_HALF_EXTENT + BOUNDS_EPS
        && p.y.abs() <= ENV_HALF_EXTENT + BOUNDS_EPS
        && p.z >= -BOUNDS_EPS
        && p.z <= ENV_HEIGHT + BOUNDS_EPS
}

/// Clamps a point into the environment box.
pub fn clamp_to_environment(p: Vec3) -> Vec3 {
    Vec3::new(
        p.x.clamp(-ENV_HALF_EXTENT, ENV_HALF_EXTENT),
        p.y.clamp(-ENV_HALF_EXTENT, ENV_HALF_EXTENT),
        p.z.clamp(0.0, ENV_HEIGHT),
    )
}

/// Wraps an angle into [-pi, pi).
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a - two_pi * ((a + PI) / two_pi).floor();
    if r >= PI {
        r -= two_pi;
    }
    if r < -PI {
        r += two_pi;
    }
    r
}

/// Camera state: position plus heading (CCW from +x) and elevation (positive up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub position: Vec3,
    pub heading: f64,
    pub elevation: f64,
}

impl Pose {
    pub fn new(position: Vec3, heading: f64, elevation: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            elevation: elevation.clamp(-PI / 2.0, PI / 2.0),
        }
    }

    /// Pose at `position` looking at `target`, falling back to `fallback_heading`
    /// when the target is straight above or below.
    pub fn looking_at(
        position: Vec3,
        target: Vec3,
        fallback_heading: f64,
    ) -> Result<Self, GeometryError> {
        let (heading, elevation) = look_at(position, target, fallback_heading)?;
        Ok(Self {
            position,
            heading,
            elevation,
        })
    }

    pub fn view_direction(&self) -> Vec3 {
        view_direction(self.heading, self.elevation)
    }
}

pub fn view_direction(heading: f64, elevation: f64) -> Vec3 {
    let (se, ce) = elevation.sin_cos();
    let (sh, ch) = heading.sin_cos();
    Vec3::new(ce * ch, ce * sh, se)
}

/// Heading and elevation pointing from `from` at `target`.
pub fn look_at(from: Vec3, target: Vec3, fallback_heading: f64) -> Result<(f64, f64), GeometryError> {
    let d = target - from;
    let n = d.norm();
    if n < 1e-12 {
        return Err(GeometryError::DegenerateLookAt);
    }
    let heading = if d.x == 0.0 && d.y == 0.0 {
        wrap_angle(fallback_heading)
    } else {
        wrap_angle(d.y.atan2(d.x))
    };
    let elevation = (d.z / n).clamp(-1.0, 1.0).asin();
    Ok((heading, elevation))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Self { min, max }
    }

    pub fn from_center_size(center: Vec3, size: Vec3) -> Self {
        let h = size * 0.5;
        Self::new(center - h, center + h)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn inflate(&self, r: f64) -> Aabb {
        let d = Vec3::new(r, r, r);
        Aabb::new(self.min - d, self.max + d)
    }

    /// Closed containment.
    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Open (interior) containment; points on a face are outside.
    pub fn contains_strict(&self, p: Vec3) -> bool {
        p.x > self.min.x
            && p.x < self.max.x
            && p.y > self.min.y
            && p.y < self.max.y
            && p.z > self.min.z
            && p.z < self.max.z
    }

    pub fn overlap_volume(&self, o: &Aabb) -> f64 {
        let lo = self.min.max(o.min);
        let hi = self.max.min(o.max);
        let d = hi - lo;
        if d.x <= 0.0 || d.y <= 0.0 || d.z <= 0.0 {
            0.0
        } else {
            d.x * d.y * d.z
        }
    }

    /// Overlap area of the xy-footprints.
    pub fn footprint_overlap(&self, o: &Aabb) -> f64 {
        let dx = self.max.x.min(o.max.x) - self.min.x.max(o.min.x);
        let dy = self.max.y.min(o.max.y) - self.min.y.max(o.min.y);
        if dx <= 0.0 || dy <= 0.0 {
            0.0
        } else {
            dx * dy
        }
    }

    pub fn footprint_area(&self) -> f64 {
        let s = self.size();
        s.x * s.y
    }

    pub fn translated(&self, d: Vec3) -> Aabb {
        Aabb::new(self.min + d, self.max + d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    /// Vertical field of view in radians.
    pub vertical_fov: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            vertical_fov: 60f64.to_radians(),
        }
    }
}

impl CameraIntrinsics {
    pub fn new(width: u32, height: u32, vertical_fov: f64) -> Result<Self, String> {
        let cam = Self {
            width,
            height,
            vertical_fov,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.width < 16 || self.height < 16 {
            return Err(format!(
                "image size {}x{} is below the 16x16 minimum",
                self.width, self.height
            ));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < PI) {
            return Err(format!("vertical fov {} outside (0, pi)", self.vertical_fov));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Camera basis (forward, right, up) for a pose.
pub fn camera_basis(pose: &Pose) -> (Vec3, Vec3, Vec3) {
    let forward = pose.view_direction();
    let (sh, ch) = pose.heading.sin_cos();
    let right = Vec3::new(sh, -ch, 0.0);
    let up = right.cross(forward);
    (forward, right, up)
}

/// Ray through continuous image coordinates `(u, v)`, where pixel `(px, py)`
/// spans `[px, px + 1) x [py, py + 1)` and `v` grows downward.
pub fn camera_ray_at(pose: &Pose, cam: &CameraIntrinsics, u: f64, v: f64) -> Ray {
    let (forward, right, up) = camera_basis(pose);
    let tan_half = (cam.vertical_fov * 0.5).tan();
    let aspect = cam.width as f64 / cam.height as f64;
    let sx = (2.0 * u / cam.width as f64 - 1.0) * tan_half * aspect;
    let sy = (1.0 - 2.0 * v / cam.height as f64) * tan_half;
    Ray {
        origin: pose.position,
        direction: (forward + right * sx + up * sy).normalize(),
    }
}

/// Pinhole ray through the center of pixel `(px, py)`.
pub fn camera_ray(pose: &Pose, cam: &CameraIntrinsics, px: u32, py: u32) -> Ray {
    camera_ray_at(pose, cam, px as f64 + 0.5, py as f64 + 0.5)
}

/// Slab intersection returning the entry distance and the axis of the entry face.
/// An origin inside (or on) the box yields `t = 0` and axis `None`.
pub fn ray_aabb_hit(ray: &Ray, b: &Aabb) -> Option<(f64, Option<usize>)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis_near = None;
    for axis in 0..3 {
        let o = ray.origin.axis(axis);
        let d = ray.direction.axis(axis);
        let lo = b.min.axis(axis);
        let hi = b.max.axis(axis);
        if d == 0.0 {
            if o < lo || o > hi {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (t0, t1) = {
            let a = (lo - o) * inv;
            let c = (hi - o) * inv;
            if a <= c {
                (a, c)
            } else {
                (c, a)
            }
        };
        if t0 > t_near {
            t_near = t0;
            axis_near = Some(axis);
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    if t_far < 0.0 {
        return None;
    }
    if t_near <= 0.0 {
        Some((0.0, None))
    } else {
        Some((t_near, axis_near))
    }
}

/// Smallest nonnegative entry distance of `ray` into `b`.
pub fn ray_aabb(ray: &Ray, b: &Aabb) -> Option<f64> {
    ray_aabb_hit(ray, b).map(|(t, _)| t)
}
