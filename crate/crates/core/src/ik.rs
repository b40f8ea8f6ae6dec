//! Goal-pose inverse kinematics: weighted pose residuals, batched
//! Levenberg-Marquardt solves with joint-limit projection, and a second
//! L-BFGS stage that trades pose error against collision costs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{self, CollisionError, CollisionReport, SceneConfig, SelfCollisionConfig};
use crate::esdf::DenseEsdf;
use crate::kinematics::{
    backprop_gradients, forward_kinematics_single, jacobian_at, sphere_grads_to_link_grads, KinematicState,
    KinematicsError,
};
use crate::pose::{so3_log, so3_right_jacobian_inv, Pose};
use crate::robot::{Interval, JointKind, RobotModel};
use crate::solvers::{lbfgs_minimize, lm_solve, LbfgsConfig, LmConfig, SolverError};

/// Penetration (m) tolerated when a solution is validated.
pub const VALIDATION_PENETRATION: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum IkError {
    #[error("no goals given")]
    NoGoals,
    #[error("no seeds given")]
    NoSeeds,
    #[error("unknown goal link `{0}`")]
    UnknownLink(String),
    #[error("goal on `{0}` needs positive tolerances and non-negative weights")]
    InvalidGoal(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Collision(#[from] CollisionError),
}

/// Target pose for one link. A zero weight removes that half of the
/// residual and skips its tolerance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub link: String,
    pub target: Pose,
    pub position_tol: f64,
    pub orientation_tol: f64,
    #[serde(default = "one")]
    pub weight_pos: f64,
    #[serde(default = "half")]
    pub weight_rot: f64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl GoalSpec {
    pub fn new(link: &str, target: Pose) -> Self {
        Self {
            link: link.into(),
            target,
            position_tol: 1e-3,
            orientation_tol: 1e-2,
            weight_pos: 1.0,
            weight_rot: 0.5,
        }
    }

    /// Position-only goal.
    pub fn position(link: &str, target: Vector3<f64>) -> Self {
        Self {
            weight_rot: 0.0,
            ..Self::new(link, Pose::from_translation(target))
        }
    }

    pub fn with_tolerances(mut self, position: f64, orientation: f64) -> Self {
        self.position_tol = position;
        self.orientation_tol = orientation;
        self
    }

    fn validate(&self) -> Result<(), IkError> {
        let ok = self.position_tol > 0.0
            && self.orientation_tol > 0.0
            && self.weight_pos >= 0.0
            && self.weight_rot >= 0.0
            && self.weight_pos + self.weight_rot > 0.0;
        if ok {
            Ok(())
        } else {
            Err(IkError::InvalidGoal(self.link.clone()))
        }
    }

    /// Unweighted position (m) and orientation (rad) errors.
    pub fn errors(&self, pose: &Pose) -> (f64, f64) {
        let p = (self.target.translation - pose.translation).norm();
        let r = so3_log(&(self.target.rotation * pose.rotation.transpose())).norm();
        (p, r)
    }

    pub fn satisfied(&self, pose: &Pose) -> bool {
        let (p, r) = self.errors(pose);
        (self.weight_pos == 0.0 || p <= self.position_tol) && (self.weight_rot == 0.0 || r <= self.orientation_tol)
    }
}

fn goal_link(model: &RobotModel, goal: &GoalSpec) -> Result<usize, IkError> {
    model
        .link_index(&goal.link)
        .ok_or_else(|| IkError::UnknownLink(goal.link.clone()))
}

/// `[w_p (p* − p); w_r log(R* Rᵀ)]` for the goal link in `state`.
pub fn pose_residual(model: &RobotModel, state: &KinematicState, goal: &GoalSpec) -> Result<Vector6<f64>, IkError> {
    let l = goal_link(model, goal)?;
    let pose = &state.link_poses[l];
    let dp = goal.weight_pos * (goal.target.translation - pose.translation);
    let dr = goal.weight_rot * so3_log(&(goal.target.rotation * pose.rotation.transpose()));
    Ok(Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z))
}

/// Residual and its 6×d jacobian for one goal.
pub fn pose_residual_jacobian(
    model: &RobotModel,
    state: &KinematicState,
    goal: &GoalSpec,
) -> Result<(Vector6<f64>, DMatrix<f64>), IkError> {
    let l = goal_link(model, goal)?;
    let r = pose_residual(model, state, goal)?;
    let pose = &state.link_poses[l];
    let j = jacobian_at(model, state, l, &pose.translation);
    let e = so3_log(&(goal.target.rotation * pose.rotation.transpose()));
    // log(M exp(−ω)) ≈ log M − J_r⁻¹(log M) ω for a world-frame rotation ω of the link
    let jr = so3_right_jacobian_inv(&e);
    let mut out = DMatrix::zeros(6, model.dof());
    let lin = j.rows(0, 3) * (-goal.weight_pos);
    let ang = (jr * j.rows(3, 3)) * (-goal.weight_rot);
    out.rows_mut(0, 3).copy_from(&lin);
    out.rows_mut(3, 3).copy_from(&ang);
    Ok((r, out))
}

fn stacked(model: &RobotModel, goals: &[GoalSpec], q: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>), IkError> {
    let state = forward_kinematics_single(model, q, &Pose::identity())?;
    let mut r = DVector::zeros(6 * goals.len());
    let mut j = DMatrix::zeros(6 * goals.len(), model.dof());
    for (k, g) in goals.iter().enumerate() {
        let (rk, jk) = pose_residual_jacobian(model, &state, g)?;
        r.rows_mut(6 * k, 6).copy_from(&rk);
        j.rows_mut(6 * k, 6).copy_from(&jk);
    }
    Ok((r, j))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkWeights {
    /// Scale of `½Σ|r|²` in the refinement objective.
    pub goal: f64,
    pub self_collision: f64,
    pub scene: f64,
    pub joint_limit: f64,
}

impl Default for IkWeights {
    fn default() -> Self {
        Self {
            goal: 1000.0,
            self_collision: 10.0,
            scene: 10.0,
            joint_limit: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IkConfig {
    pub lm: LmConfig,
    pub lbfgs: LbfgsConfig,
    pub weights: IkWeights,
    pub self_collision: SelfCollisionConfig,
    pub scene: SceneConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkResult {
    pub q: Vec<f64>,
    /// Per goal, meters.
    pub position_error: Vec<f64>,
    /// Per goal, radians.
    pub orientation_error: Vec<f64>,
    pub self_collision_free: bool,
    pub scene_collision_free: bool,
    pub converged: bool,
    /// `½Σ|r|²` over all goals.
    pub pose_cost: f64,
    pub seed_index: usize,
    pub iterations: usize,
}

impl IkResult {
    pub fn collision_free(&self) -> bool {
        self.self_collision_free && self.scene_collision_free
    }

    /// Within tolerance and collision-free.
    pub fn feasible(&self) -> bool {
        self.converged && self.collision_free()
    }
}

/// Finite sampling interval per DoF; unbounded revolute joints span
/// `[-π, π]`, unbounded prismatic joints `[-1, 1]` m.
pub fn sampling_bounds(model: &RobotModel) -> Vec<Interval> {
    (0..model.dof())
        .map(|d| {
            let j = model.dof_joint(d);
            let p = j.limits.position;
            let fallback = if j.kind == JointKind::Prismatic { 1.0 } else { PI };
            Interval::new(
                if p.lo.is_finite() { p.lo } else { -fallback },
                if p.hi.is_finite() { p.hi } else { fallback },
            )
        })
        .collect()
}

/// Named configurations (sorted by name) followed by uniform samples within
/// the position limits, `count` in total.
pub fn generate_seeds(model: &RobotModel, count: usize, rng_seed: u64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = model
        .named_configurations()
        .values()
        .filter(|q| q.len() == model.dof())
        .take(count)
        .cloned()
        .collect();
    let bounds = sampling_bounds(model);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    while out.len() < count {
        out.push(bounds.iter().map(|b| rng.gen_range(b.lo..=b.hi)).collect());
    }
    out
}

fn clamp_to_limits(limits: &[Interval], q: &mut [f64]) {
    for (v, l) in q.iter_mut().zip(limits) {
        *v = l.clamp(*v);
    }
}

/// Penetration flags at one configuration.
pub fn collision_flags(
    model: &RobotModel,
    state: &KinematicState,
    world: Option<&DenseEsdf>,
    config: &IkConfig,
) -> Result<(bool, bool), IkError> {
    let s = collision::self_collision(model, &state.sphere_centers, &config.self_collision)?;
    let scene = match world {
        Some(w) => collision::scene_static(w, &state.sphere_centers, &state.sphere_radii, &config.scene)?.is_free(VALIDATION_PENETRATION),
        None => true,
    };
    Ok((s.is_free(VALIDATION_PENETRATION), scene))
}

fn check_inputs(model: &RobotModel, goals: &[GoalSpec], seeds: &[Vec<f64>]) -> Result<(), IkError> {
    if goals.is_empty() {
        return Err(IkError::NoGoals);
    }
    if seeds.is_empty() {
        return Err(IkError::NoSeeds);
    }
    for g in goals {
        goal_link(model, g)?;
        g.validate()?;
    }
    for s in seeds {
        crate::kinematics::check_q(model, s)?;
    }
    Ok(())
}

fn summarize(
    model: &RobotModel,
    goals: &[GoalSpec],
    q: Vec<f64>,
    world: Option<&DenseEsdf>,
    config: &IkConfig,
    seed_index: usize,
    iterations: usize,
) -> Result<IkResult, IkError> {
    let state = forward_kinematics_single(model, &q, &Pose::identity())?;
    let mut position_error = Vec::with_capacity(goals.len());
    let mut orientation_error = Vec::with_capacity(goals.len());
    let mut converged = true;
    let mut pose_cost = 0.0;
    for g in goals {
        let pose = &state.link_poses[goal_link(model, g)?];
        let (p, r) = g.errors(pose);
        position_error.push(p);
        orientation_error.push(r);
        converged &= g.satisfied(pose);
        pose_cost += 0.5 * pose_residual(model, &state, g)?.norm_squared();
    }
    let (self_free, scene_free) = collision_flags(model, &state, world, config)?;
    Ok(IkResult {
        q,
        position_error,
        orientation_error,
        self_collision_free: self_free,
        scene_collision_free: scene_free,
        converged,
        pose_cost,
        seed_index,
        iterations,
    })
}

fn solve_seed(
    model: &RobotModel,
    goals: &[GoalSpec],
    seed: &[f64],
    index: usize,
    config: &IkConfig,
) -> Result<IkResult, IkError> {
    let limits = model.position_limits();
    let mut q0 = seed.to_vec();
    clamp_to_limits(&limits, &mut q0);
    let residual = |q: &DVector<f64>| match stacked(model, goals, q.as_slice()) {
        Ok(v) => v,
        // unreachable for validated inputs; a NaN residual is rejected by the solver
        Err(_) => (
            DVector::from_element(6 * goals.len(), f64::NAN),
            DMatrix::zeros(6 * goals.len(), model.dof()),
        ),
    };
    let project = |q: &mut DVector<f64>| clamp_to_limits(&limits, q.as_mut_slice());
    let done = |s: &crate::solvers::LmState| {
        forward_kinematics_single(model, s.q.as_slice(), &Pose::identity())
            .map(|st| {
                goals
                    .iter()
                    .all(|g| model.link_index(&g.link).is_some_and(|l| g.satisfied(&st.link_poses[l])))
            })
            .unwrap_or(false)
    };
    let report = lm_solve(DVector::from_vec(q0), &residual, &config.lm, project, done)?;
    summarize(model, goals, report.state.q.as_slice().to_vec(), None, config, index, report.iterations)
}

fn sort_results(results: &mut [IkResult]) {
    results.sort_by(|a, b| {
        b.feasible()
            .cmp(&a.feasible())
            .then(b.converged.cmp(&a.converged))
            .then(a.pose_cost.total_cmp(&b.pose_cost))
            .then(a.seed_index.cmp(&b.seed_index))
    });
}

/// LM from every seed on the stacked pose residuals; results sorted with
/// converged solutions first, then by pose cost.
pub fn solve_ik(
    model: &RobotModel,
    goals: &[GoalSpec],
    seeds: &[Vec<f64>],
    config: &IkConfig,
) -> Result<Vec<IkResult>, IkError> {
    check_inputs(model, goals, seeds)?;
    let mut out = seeds
        .par_iter()
        .enumerate()
        .map(|(i, s)| solve_seed(model, goals, s, i, config))
        .collect::<Result<Vec<_>, _>>()?;
    for r in out.iter_mut() {
        let state = forward_kinematics_single(model, &r.q, &Pose::identity())?;
        let (s, _) = collision_flags(model, &state, None, config)?;
        r.self_collision_free = s;
    }
    sort_results(&mut out);
    Ok(out)
}

/// Value and gradient of the refinement objective
/// `w_g·½Σ|r|² + w_self·C_self + w_scene·C_scene + w_lim·Σ excess²`.
pub fn refinement_objective(
    model: &RobotModel,
    goals: &[GoalSpec],
    world: Option<&DenseEsdf>,
    config: &IkConfig,
    q: &[f64],
) -> Result<(f64, Vec<f64>), IkError> {
    let w = &config.weights;
    let state = forward_kinematics_single(model, q, &Pose::identity())?;
    let mut value = 0.0;
    let mut grad = DVector::zeros(model.dof());
    for g in goals {
        let (r, j) = pose_residual_jacobian(model, &state, g)?;
        value += w.goal * 0.5 * r.norm_squared();
        grad += w.goal * j.transpose() * r;
    }
    let mut sphere_grads = vec![Vector3::zeros(); state.sphere_centers.len()];
    let mut add = |rep: &CollisionReport, weight: f64| {
        value += weight * rep.cost;
        for (a, b) in sphere_grads.iter_mut().zip(&rep.gradient) {
            *a += weight * b;
        }
    };
    if w.self_collision > 0.0 {
        add(&collision::self_collision(model, &state.sphere_centers, &config.self_collision)?, w.self_collision);
    }
    if let Some(esdf) = world.filter(|_| w.scene > 0.0) {
        add(
            &collision::scene_static(esdf, &state.sphere_centers, &state.sphere_radii, &config.scene)?,
            w.scene,
        );
    }
    let link_grads = sphere_grads_to_link_grads(model, &state, &sphere_grads);
    let gq = backprop_gradients(model, &state, &link_grads)?;
    let mut grad: Vec<f64> = grad.iter().zip(&gq).map(|(a, b)| a + b).collect();
    for (d, l) in model.position_limits().iter().enumerate() {
        let e = l.excess(q[d]);
        if e > 0.0 {
            value += w.joint_limit * e * e;
            grad[d] += 2.0 * w.joint_limit * e * if q[d] > l.hi { 1.0 } else { -1.0 };
        }
    }
    Ok((value, grad))
}

fn refine(
    model: &RobotModel,
    goals: &[GoalSpec],
    world: Option<&DenseEsdf>,
    config: &IkConfig,
    stage1: IkResult,
) -> Result<IkResult, IkError> {
    let objective = |q: &DVector<f64>| match refinement_objective(model, goals, world, config, q.as_slice()) {
        Ok((v, g)) => (v, DVector::from_vec(g)),
        Err(_) => (f64::NAN, DVector::zeros(q.len())),
    };
    let before = objective(&DVector::from_column_slice(&stage1.q)).0;
    let res = lbfgs_minimize(&objective, DVector::from_column_slice(&stage1.q), &config.lbfgs)?;
    let mut q = res.q.as_slice().to_vec();
    clamp_to_limits(&model.position_limits(), &mut q);
    let after = objective(&DVector::from_column_slice(&q)).0;
    let refined = summarize(model, goals, q, world, config, stage1.seed_index, stage1.iterations + res.iterations)?;
    // a feasible solution is only replaced by another feasible one
    let take = refined.feasible() || (!stage1.feasible() && after < before);
    Ok(if take { refined } else { stage1 })
}

/// Pose-only LM from every seed, then L-BFGS on pose error plus collision
/// and joint-limit penalties from each LM solution. Results carry flags from
/// validation at [`VALIDATION_PENETRATION`] and are sorted feasible first.
pub fn solve_ik_collision_free(
    model: &RobotModel,
    goals: &[GoalSpec],
    seeds: &[Vec<f64>],
    world: Option<&DenseEsdf>,
    config: &IkConfig,
) -> Result<Vec<IkResult>, IkError> {
    check_inputs(model, goals, seeds)?;
    let mut out = seeds
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let first = solve_seed(model, goals, s, i, config)?;
            let first = summarize(model, goals, first.q, world, config, i, first.iterations)?;
            refine(model, goals, world, config, first)
        })
        .collect::<Result<Vec<_>, _>>()?;
    sort_results(&mut out);
    Ok(out)
}
