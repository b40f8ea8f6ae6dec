//! Dynamics-aware motion optimization on kinematic trees.
//!
//! The crate provides differentiable forward kinematics and inverse dynamics,
//! uniform cubic B-spline trajectories with boundary-state anchoring, a
//! block-sparse TSDF world model with an exact dense ESDF, sphere-based
//! collision costs, Levenberg-Marquardt and L-BFGS solvers, and the inverse
//! kinematics and trajectory planners built from them.

pub mod fixtures;
pub mod geometry;
pub mod ik;
pub mod kinematics;
pub mod pose;
pub mod bspline;
pub mod collision;
pub mod dynamics;
pub mod esdf;
pub mod robot;
pub mod solvers;
pub mod spatial;
pub mod trajopt;
pub mod synth;
pub mod tsdf;

pub use pose::Pose;
pub use robot::{load_robot, ModelError, RobotModel};
