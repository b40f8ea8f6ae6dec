//! Batched forward kinematics, topology-cached gradient backpropagation and
//! sparse tree Jacobians.

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::pose::Pose;
use crate::robot::{JointKind, RobotModel};

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite joint value at index {0}")]
    NonFinite(usize),
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("expected {expected} link gradients, got {got}")]
    GradientLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicState {
    pub q: Vec<f64>,
    pub link_poses: Vec<Pose>,
    pub sphere_centers: Vec<Vector3<f64>>,
    pub sphere_radii: Vec<f64>,
    pub tool_poses: Vec<Pose>,
    pub com: Vector3<f64>,
    pub total_mass: f64,
}

/// Upstream gradient of a scalar with respect to one link frame: position of
/// the frame origin and a world-frame rotation tangent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinkGradient {
    pub position: Vector3<f64>,
    pub orientation: Vector3<f64>,
}

pub fn check_q(model: &RobotModel, q: &[f64]) -> Result<(), KinematicsError> {
    if q.len() != model.dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: model.dof(),
            got: q.len(),
        });
    }
    if let Some(i) = q.iter().position(|v| !v.is_finite()) {
        return Err(KinematicsError::NonFinite(i));
    }
    Ok(())
}

/// World poses of every link with the root placed at `base`.
pub fn link_poses(model: &RobotModel, q: &[f64], base: &Pose) -> Vec<Pose> {
    let n = model.links().len();
    let mut poses = vec![*base; n];
    // links are stored in topological order
    for l in 1..n {
        if let Some(j) = model.link_joint(l) {
            poses[l] = poses[j.parent].compose(&j.local_pose(j.value(q)));
        }
    }
    poses
}

pub fn forward_kinematics_single(
    model: &RobotModel,
    q: &[f64],
    base: &Pose,
) -> Result<KinematicState, KinematicsError> {
    check_q(model, q)?;
    let link_poses = link_poses(model, q, base);
    let mut sphere_centers = Vec::with_capacity(model.sphere_count());
    let mut sphere_radii = Vec::with_capacity(model.sphere_count());
    let mut mass = 0.0;
    let mut weighted = Vector3::zeros();
    for (link, pose) in model.links().iter().zip(&link_poses) {
        for s in &link.spheres {
            sphere_centers.push(pose.transform_point(&s.center));
            sphere_radii.push(s.radius);
        }
        mass += link.mass;
        weighted += link.mass * pose.transform_point(&link.com);
    }
    let com = if mass > 0.0 { weighted / mass } else { base.translation };
    let tool_poses = model
        .tool_link_indices()
        .iter()
        .map(|&i| link_poses[i])
        .collect();
    Ok(KinematicState {
        q: q.to_vec(),
        link_poses,
        sphere_centers,
        sphere_radii,
        tool_poses,
        com,
        total_mass: mass,
    })
}

/// Forward kinematics for a batch of configurations with the root at the identity.
pub fn forward_kinematics(
    model: &RobotModel,
    q_batch: &[Vec<f64>],
) -> Result<Vec<KinematicState>, KinematicsError> {
    forward_kinematics_with_base(model, q_batch, &Pose::identity())
}

pub fn forward_kinematics_with_base(
    model: &RobotModel,
    q_batch: &[Vec<f64>],
    base: &Pose,
) -> Result<Vec<KinematicState>, KinematicsError> {
    q_batch
        .par_iter()
        .map(|q| forward_kinematics_single(model, q, base))
        .collect()
}

/// World-frame motion axis of the joint feeding `link`.
fn world_axis(model: &RobotModel, state: &KinematicState, link: usize) -> Vector3<f64> {
    let j = model.link_joint(link).expect("non-root link");
    state.link_poses[link].rotation * j.axis
}

/// `∂L/∂q` from per-link upstream gradients, accumulated tips → root so each
/// link contributes only through its ancestors.
pub fn backprop_gradients(
    model: &RobotModel,
    state: &KinematicState,
    link_grads: &[LinkGradient],
) -> Result<Vec<f64>, KinematicsError> {
    let n = model.links().len();
    if link_grads.len() != n {
        return Err(KinematicsError::GradientLength {
            expected: n,
            got: link_grads.len(),
        });
    }
    // subtree sums of force-like Σg and moment-like Σ(p×g + g_rot)
    let mut force: Vec<Vector3<f64>> = link_grads.iter().map(|g| g.position).collect();
    let mut moment: Vec<Vector3<f64>> = link_grads
        .iter()
        .zip(&state.link_poses)
        .map(|(g, p)| p.translation.cross(&g.position) + g.orientation)
        .collect();
    let mut grad = vec![0.0; model.dof()];
    for l in (1..n).rev() {
        let j = model.link_joint(l).expect("non-root link");
        if let Some(d) = j.dof {
            let axis = world_axis(model, state, l);
            let p = state.link_poses[l].translation;
            let g = match j.kind {
                JointKind::Revolute => axis.dot(&(moment[l] - p.cross(&force[l]))),
                JointKind::Prismatic => axis.dot(&force[l]),
                JointKind::Fixed => 0.0,
            };
            grad[d] += j.multiplier * g;
        }
        let (f, m) = (force[l], moment[l]);
        force[j.parent] += f;
        moment[j.parent] += m;
    }
    Ok(grad)
}

/// Per-link gradients induced by upstream gradients on world sphere centers.
pub fn sphere_grads_to_link_grads(
    model: &RobotModel,
    state: &KinematicState,
    sphere_grads: &[Vector3<f64>],
) -> Vec<LinkGradient> {
    let mut out = vec![LinkGradient::default(); model.links().len()];
    for ((s, g), c) in sphere_grads
        .iter()
        .enumerate()
        .zip(&state.sphere_centers)
    {
        let l = model.sphere_links()[s];
        out[l].position += g;
        out[l].orientation += (c - state.link_poses[l].translation).cross(g);
    }
    out
}

/// 6×d Jacobian of the frame origin of `target`; rows are `[linear; angular]`.
pub fn jacobian(
    model: &RobotModel,
    state: &KinematicState,
    target: &str,
) -> Result<DMatrix<f64>, KinematicsError> {
    let e = model
        .link_index(target)
        .ok_or_else(|| KinematicsError::UnknownLink(target.to_string()))?;
    Ok(jacobian_at(model, state, e, &state.link_poses[e].translation))
}

/// 6×d Jacobian of a world point rigidly attached to link `e`.
pub fn jacobian_at(
    model: &RobotModel,
    state: &KinematicState,
    e: usize,
    point: &Vector3<f64>,
) -> DMatrix<f64> {
    let cache = model.cache();
    let mut jac = DMatrix::zeros(6, model.dof());
    for j in 0..model.dof() {
        if !cache.affects[j][e] {
            continue;
        }
        for &l in &cache.connected_links[j] {
            if !cache.link_chain[e].contains(&l) {
                continue;
            }
            let lj = model.link_joint(l).expect("driven link has a joint");
            let axis = world_axis(model, state, l);
            let (lin, ang) = match lj.kind {
                JointKind::Revolute => (axis.cross(&(point - state.link_poses[l].translation)), axis),
                JointKind::Prismatic => (axis, Vector3::zeros()),
                JointKind::Fixed => continue,
            };
            for r in 0..3 {
                jac[(r, j)] += lj.multiplier * lin[r];
                jac[(r + 3, j)] += lj.multiplier * ang[r];
            }
        }
    }
    jac
}
