//! Simulation, dataset generation, baselines and evaluation for embodied
//! captioning: an agent starts at a poor viewpoint in a procedurally generated
//! scene, navigates a lattice world, and describes what it saw.

pub mod baselines;
pub mod dataset;
pub mod envserver;
pub mod geometry;
pub mod gridworld;
pub mod metrics;
pub mod oracle;
pub mod render;
pub mod scenegen;

pub use geometry::{Aabb, CameraIntrinsics, GridIndex, Pose, Ray, Vec3};
pub use scenegen::{generate_scene, Catalog, Instance, Scene};
