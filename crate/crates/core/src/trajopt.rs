//! Trajectory optimization over B-spline control points.
//!
//! The decision variables are the free control points of a spline anchored
//! at the start state (ghost points) and brought to rest at the end (terminal
//! clamp). Smoothness, length and energy costs are combined with quadratic
//! penalties for joint and torque limits, collisions and the goal pose, all
//! evaluated on the uniform sample grid and minimized with L-BFGS from
//! several seeds.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::{BsplineError, SplineTrajectory, StateSample, DEFAULT_N_INTERP};
use crate::collision::{self, CollisionError, SceneConfig, SelfCollisionConfig};
use crate::dynamics::{rnea, rnea_vjp, DynamicsError, DEFAULT_GRAVITY};
use crate::esdf::DenseEsdf;
use crate::ik::{self, GoalSpec, IkConfig, IkError, VALIDATION_PENETRATION};
use crate::kinematics::{
    backprop_gradients, forward_kinematics_single, sphere_grads_to_link_grads, KinematicState, KinematicsError,
};
use crate::pose::Pose;
use crate::robot::{halton, Interval, ModelError, RobotModel};
use crate::solvers::{lbfgs_minimize_batch, LbfgsConfig, SolverError};

/// Absolute slack on joint and torque limits during validation.
pub const LIMIT_TOLERANCE: f64 = 1e-9;
/// Largest terminal velocity or acceleration accepted as rest.
pub const REST_TOLERANCE: f64 = 1e-9;
/// Validation samples per optimization sample.
pub const VALIDATION_DENSITY: usize = 4;

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

#[derive(Debug, Error)]
pub enum TrajoptError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("dynamics requested but the robot has no inertial data")]
    NoInertia,
    #[error("no collision-free goal configuration found")]
    NoGoalConfiguration,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Bspline(#[from] BsplineError),
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error(transparent)]
    Ik(#[from] IkError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub type Result<T> = std::result::Result<T, TrajoptError>;

/// Cost scales and penalty weights. Limit and torque penalties reach their
/// weight at the true limit; the goal penalty reaches half its weight at one
/// tolerance of error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub gamma_smooth: f64,
    pub gamma_length: f64,
    pub gamma_energy: f64,
    pub joint_limit: f64,
    pub scene: f64,
    #[serde(rename = "self")]
    pub self_collision: f64,
    pub goal: f64,
    pub torque: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            gamma_smooth: 1e-3,
            gamma_length: 1e-2,
            gamma_energy: 1e-2,
            joint_limit: 100.0,
            scene: 500.0,
            self_collision: 500.0,
            goal: 50.0,
            torque: 100.0,
        }
    }
}

impl CostWeights {
    fn validate(&self) -> Result<()> {
        let w = [
            self.gamma_smooth,
            self.gamma_length,
            self.gamma_energy,
            self.joint_limit,
            self.scene,
            self.self_collision,
            self.goal,
            self.torque,
        ];
        if w.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(TrajoptError::InvalidProblem("cost weights must be finite and non-negative".into()))
        }
    }
}

/// Rigid body attached to a link: `com` in the link frame, `inertia`
/// `[ixx, iyy, izz, ixy, ixz, iyz]` about its own center of mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub link: String,
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
    #[serde(default)]
    pub inertia: [f64; 6],
}

impl Payload {
    pub fn point(link: &str, mass: f64, com: [f64; 3]) -> Self {
        Self {
            link: link.into(),
            mass,
            com,
            inertia: [0.0; 6],
        }
    }

    /// Copy of `model` carrying this payload.
    pub fn apply(&self, model: &RobotModel) -> std::result::Result<RobotModel, ModelError> {
        let [xx, yy, zz, xy, xz, yz] = self.inertia;
        let inertia = Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
        model.set_payload(&self.link, self.mass, Vector3::from(self.com), inertia)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartState {
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub theta_ddot: Vec<f64>,
}

impl StartState {
    pub fn at_rest(theta: Vec<f64>) -> Self {
        let d = theta.len();
        Self {
            theta,
            theta_dot: vec![0.0; d],
            theta_ddot: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanProblem {
    pub start: StartState,
    pub goals: Vec<GoalSpec>,
    pub world: Option<Arc<DenseEsdf>>,
    pub weights: CostWeights,
    /// Number of free control points K.
    pub segments: usize,
    /// Knot interval, seconds.
    pub dt_u: f64,
    pub n_interp: usize,
    pub payload: Option<Payload>,
    pub seed_count: usize,
    pub enable_dynamics: bool,
    pub gravity: [f64; 3],
    /// Fraction of each limit's half-width kept as margin by the penalties.
    pub limit_margin: f64,
    /// IK seeds used to find goal configurations.
    pub ik_seeds: usize,
    pub rng_seed: u64,
    pub lbfgs: LbfgsConfig,
    pub scene: SceneConfig,
    pub self_collision: SelfCollisionConfig,
}

impl PlanProblem {
    pub fn new(start: StartState, goals: Vec<GoalSpec>) -> Self {
        Self {
            start,
            goals,
            world: None,
            weights: CostWeights::default(),
            segments: 8,
            dt_u: 0.25,
            n_interp: DEFAULT_N_INTERP,
            payload: None,
            seed_count: 4,
            enable_dynamics: false,
            gravity: DEFAULT_GRAVITY,
            limit_margin: 0.05,
            ik_seeds: 16,
            rng_seed: 0,
            lbfgs: LbfgsConfig::default(),
            scene: SceneConfig::default(),
            self_collision: SelfCollisionConfig::default(),
        }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        let d = model.dof();
        let bad = |m: String| Err(TrajoptError::InvalidProblem(m));
        let s = &self.start;
        if s.theta.len() != d || s.theta_dot.len() != d || s.theta_ddot.len() != d {
            return bad(format!("start state must have {d} entries per order"));
        }
        if s.theta.iter().chain(&s.theta_dot).chain(&s.theta_ddot).any(|v| !v.is_finite()) {
            return bad("start state is not finite".into());
        }
        for j in 0..d {
            let l = model.dof_limits(j);
            let checks = [(l.position, s.theta[j]), (l.velocity, s.theta_dot[j]), (l.acceleration, s.theta_ddot[j])];
            if checks.iter().any(|(iv, v)| iv.excess(*v) > LIMIT_TOLERANCE) {
                return bad(format!("start state violates the limits of DoF {j}"));
            }
        }
        if self.goals.is_empty() {
            return bad("no goals".into());
        }
        if self.segments < 4 {
            return bad(format!("need at least 4 control points, got {}", self.segments));
        }
        if !(self.dt_u > 0.0 && self.dt_u.is_finite()) || self.n_interp == 0 {
            return bad("dt_u must be positive and n_interp at least 1".into());
        }
        if self.seed_count == 0 || self.ik_seeds == 0 {
            return bad("seed counts must be positive".into());
        }
        if !(self.limit_margin > 0.0 && self.limit_margin < 1.0) {
            return bad("limit_margin must lie in (0, 1)".into());
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return bad("gravity is not finite".into());
        }
        self.weights.validate()
    }

    /// Spline anchored at the start state with the given free control points.
    pub fn spline(&self, control_points: DMatrix<f64>) -> Result<SplineTrajectory> {
        let s = &self.start;
        Ok(SplineTrajectory::anchored(
            &s.theta,
            &s.theta_dot,
            &s.theta_ddot,
            control_points,
            self.dt_u,
            self.n_interp,
        )?)
    }
}

/// Unweighted-by-term totals; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CostBreakdown {
    pub smooth: f64,
    pub length: f64,
    pub energy: f64,
    pub joint_limit: f64,
    pub scene: f64,
    pub self_collision: f64,
    pub goal: f64,
    pub torque: f64,
    pub total: f64,
}

impl CostBreakdown {
    fn add(&mut self, o: &CostBreakdown) {
        self.smooth += o.smooth;
        self.length += o.length;
        self.energy += o.energy;
        self.joint_limit += o.joint_limit;
        self.scene += o.scene;
        self.self_collision += o.self_collision;
        self.goal += o.goal;
        self.torque += o.torque;
    }

    fn finish(mut self) -> Self {
        self.total = self.smooth
            + self.length
            + self.energy
            + self.joint_limit
            + self.scene
            + self.self_collision
            + self.goal
            + self.torque;
        self
    }
}

/// A limit penalized outside its shrunk interval, normalized by the margin.
#[derive(Debug, Clone, Copy)]
struct SoftLimit {
    inner: Interval,
    margin: f64,
}

impl SoftLimit {
    fn new(iv: Interval, fraction: f64) -> Self {
        Self {
            inner: iv.shrink(fraction),
            margin: if iv.is_bounded() { fraction * 0.5 * (iv.hi - iv.lo) } else { 1.0 },
        }
    }

    /// `w (e/m)²` and its derivative.
    fn penalty(&self, v: f64, w: f64) -> (f64, f64) {
        let e = self.inner.excess(v);
        if e == 0.0 {
            return (0.0, 0.0);
        }
        let sign = if v > self.inner.hi { 1.0 } else { -1.0 };
        let k = w / (self.margin * self.margin);
        (k * e * e, 2.0 * k * e * sign)
    }
}

/// Cost evaluator with the payload model and penalty limits prepared once.
pub struct CostModel<'a> {
    model: &'a RobotModel,
    problem: &'a PlanProblem,
    dynamics: Option<RobotModel>,
    limits: Vec<[SoftLimit; 4]>,
    torque: Vec<SoftLimit>,
    gravity: Vector3<f64>,
}

/// Per-sample contribution.
struct SampleTerms {
    cost: CostBreakdown,
    grad: DMatrix<f64>,
}

impl<'a> CostModel<'a> {
    pub fn new(model: &'a RobotModel, problem: &'a PlanProblem) -> Result<Self> {
        problem.validate(model)?;
        for g in &problem.goals {
            if model.link_index(&g.link).is_none() {
                return Err(IkError::UnknownLink(g.link.clone()).into());
            }
        }
        let dynamics = if problem.enable_dynamics {
            if !model.has_inertia() {
                return Err(TrajoptError::NoInertia);
            }
            Some(match &problem.payload {
                Some(p) => p.apply(model)?,
                None => model.clone(),
            })
        } else {
            None
        };
        let f = problem.limit_margin;
        let limits = (0..model.dof())
            .map(|j| {
                let l = model.dof_limits(j);
                [l.position, l.velocity, l.acceleration, l.jerk].map(|iv| SoftLimit::new(iv, f))
            })
            .collect();
        let torque = (0..model.dof())
            .map(|j| SoftLimit::new(model.dof_limits(j).torque, f))
            .collect();
        Ok(Self {
            model,
            problem,
            dynamics,
            limits,
            torque,
            gravity: Vector3::from(problem.gravity),
        })
    }

    pub fn evaluate(&self, spline: &SplineTrajectory) -> Result<(f64, DMatrix<f64>, CostBreakdown)> {
        let p = self.problem;
        let model = self.model;
        let samples = spline.sample_uniform();
        let states: Vec<KinematicState> = samples
            .par_iter()
            .map(|s| forward_kinematics_single(model, &s.theta, &Pose::identity()))
            .collect::<std::result::Result<_, _>>()?;
        let scene = match &p.world {
            Some(w) if p.weights.scene > 0.0 => {
                let centers: Vec<Vec<Vector3<f64>>> = states.iter().map(|s| s.sphere_centers.clone()).collect();
                Some(collision::scene_swept(w, &centers, &model.sphere_radii(), &p.scene)?)
            }
            _ => None,
        };
        let dt = spline.dt_u / spline.n_interp as f64;
        let last = samples.len() - 1;
        let terms: Vec<SampleTerms> = samples
            .par_iter()
            .zip(&states)
            .enumerate()
            .map(|(i, (s, st))| {
                let scene_report = scene.as_ref().map(|r| &r[i]);
                self.sample_terms(s, st, scene_report, dt, i == last)
            })
            .collect::<Result<_>>()?;
        let mut breakdown = CostBreakdown::default();
        for t in &terms {
            breakdown.add(&t.cost);
        }
        let breakdown = breakdown.finish();
        let grads: Vec<DMatrix<f64>> = terms.into_iter().map(|t| t.grad).collect();
        let gradient = spline.vjp(&grads)?;
        Ok((breakdown.total, gradient, breakdown))
    }

    fn sample_terms(
        &self,
        s: &StateSample,
        st: &KinematicState,
        scene: Option<&collision::CollisionReport>,
        dt: f64,
        is_last: bool,
    ) -> Result<SampleTerms> {
        let p = self.problem;
        let w = &p.weights;
        let model = self.model;
        let d = model.dof();
        let mut c = CostBreakdown::default();
        let mut g = DMatrix::zeros(d, 4);
        for j in 0..d {
            c.smooth += w.gamma_smooth * s.theta_ddot[j] * s.theta_ddot[j];
            g[(j, 2)] += 2.0 * w.gamma_smooth * s.theta_ddot[j];
            c.length += w.gamma_length * s.theta_dot[j] * s.theta_dot[j];
            g[(j, 1)] += 2.0 * w.gamma_length * s.theta_dot[j];
            for k in 0..4 {
                let (v, dv) = self.limits[j][k].penalty(s.order(k)[j], w.joint_limit);
                c.joint_limit += v;
                g[(j, k)] += dv;
            }
        }
        if let Some(dm) = &self.dynamics {
            let (tau, cache) = rnea(dm, &s.theta, &s.theta_dot, &s.theta_ddot, None, &self.gravity)?;
            let mut tau_bar = vec![0.0; d];
            for j in 0..d {
                let e = s.theta_dot[j] * tau[j] * dt;
                c.energy += w.gamma_energy * e * e;
                tau_bar[j] += 2.0 * w.gamma_energy * e * s.theta_dot[j] * dt;
                g[(j, 1)] += 2.0 * w.gamma_energy * e * tau[j] * dt;
                let (v, dv) = self.torque[j].penalty(tau[j], w.torque);
                c.torque += v;
                tau_bar[j] += dv;
            }
            let back = rnea_vjp(dm, &s.theta, &s.theta_dot, &tau_bar, &cache)?;
            for j in 0..d {
                g[(j, 0)] += back.q_bar[j];
                g[(j, 1)] += back.qd_bar[j];
                g[(j, 2)] += back.qdd_bar[j];
            }
        }
        let mut sphere_grads = vec![Vector3::zeros(); st.sphere_centers.len()];
        if w.self_collision > 0.0 {
            let r = collision::self_collision(model, &st.sphere_centers, &p.self_collision)?;
            c.self_collision += w.self_collision * r.cost;
            for (a, b) in sphere_grads.iter_mut().zip(&r.gradient) {
                *a += w.self_collision * b;
            }
        }
        if let Some(r) = scene {
            c.scene += w.scene * r.cost;
            for (a, b) in sphere_grads.iter_mut().zip(&r.gradient) {
                *a += w.scene * b;
            }
        }
        if sphere_grads.iter().any(|v| *v != Vector3::zeros()) {
            let links = sphere_grads_to_link_grads(model, st, &sphere_grads);
            let q_bar = backprop_gradients(model, st, &links)?;
            for j in 0..d {
                g[(j, 0)] += q_bar[j];
            }
        }
        if is_last && w.goal > 0.0 {
            for goal in &p.goals {
                let (r, jac) = ik::pose_residual_jacobian(model, st, goal)?;
                let scale = [goal.position_tol, goal.orientation_tol];
                for row in 0..6 {
                    let rn = r[row] / scale[row / 3];
                    c.goal += 0.5 * w.goal * rn * rn;
                    for j in 0..d {
                        g[(j, 0)] += w.goal * rn * jac[(row, j)] / scale[row / 3];
                    }
                }
            }
        }
        Ok(SampleTerms { cost: c, grad: g })
    }
}

/// Total cost, its gradient with respect to the free control points, and the
/// per-term breakdown.
pub fn total_cost(
    model: &RobotModel,
    problem: &PlanProblem,
    spline: &SplineTrajectory,
) -> Result<(f64, DMatrix<f64>, CostBreakdown)> {
    CostModel::new(model, problem)?.evaluate(spline)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Position,
    Velocity,
    Acceleration,
    Jerk,
    Torque,
    SelfCollision,
    SceneCollision,
    Goal,
    TerminalRest,
}

impl Constraint {
    pub fn is_kinematic(self) -> bool {
        self != Constraint::Torque
    }
}

/// Worst value of one constraint over a trajectory. `worst` is the limit
/// excess (limits, torque), penetration depth (collisions, negative means
/// clearance), error in tolerances (goal) or largest terminal rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub constraint: Constraint,
    pub worst: f64,
    pub threshold: f64,
    pub t: f64,
    pub sample: usize,
    pub dof: Option<usize>,
}

impl ConstraintCheck {
    pub fn violated(&self) -> bool {
        !(self.worst <= self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ViolationReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ViolationReport {
    pub fn violations(&self) -> Vec<ConstraintCheck> {
        self.checks.iter().filter(|c| c.violated()).copied().collect()
    }

    pub fn is_feasible(&self) -> bool {
        self.checks.iter().all(|c| !c.violated())
    }

    /// Feasible when torque limits are ignored.
    pub fn kinematic_feasible(&self) -> bool {
        self.checks.iter().all(|c| !c.constraint.is_kinematic() || !c.violated())
    }

    pub fn get(&self, constraint: Constraint) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.constraint == constraint)
    }

    /// Violated-constraint count and total excess relative to thresholds.
    fn score(&self) -> (usize, f64) {
        let v = self.violations();
        let excess = v
            .iter()
            .map(|c| (c.worst - c.threshold) / c.threshold.max(1e-3))
            .sum();
        (v.len(), excess)
    }
}

struct Tracker {
    check: ConstraintCheck,
}

impl Tracker {
    fn new(constraint: Constraint, threshold: f64, initial: f64) -> Self {
        Self {
            check: ConstraintCheck {
                constraint,
                worst: initial,
                threshold,
                t: 0.0,
                sample: 0,
                dof: None,
            },
        }
    }

    fn observe(&mut self, v: f64, t: f64, sample: usize, dof: Option<usize>) {
        if v > self.check.worst || v.is_nan() {
            self.check.worst = v;
            self.check.t = t;
            self.check.sample = sample;
            self.check.dof = dof;
        }
    }
}

/// Checks joint limits of every order, self and scene penetration, the goal
/// at the last sample, terminal rest and, for models with inertia, torque
/// limits under `payload` with the given gravity.
pub fn validate_trajectory(
    model: &RobotModel,
    world: Option<&DenseEsdf>,
    samples: &[StateSample],
    payload: Option<&Payload>,
    goals: &[GoalSpec],
    gravity: [f64; 3],
) -> Result<ViolationReport> {
    if samples.is_empty() {
        return Ok(ViolationReport::default());
    }
    let d = model.dof();
    let states: Vec<KinematicState> = samples
        .par_iter()
        .map(|s| forward_kinematics_single(model, &s.theta, &Pose::identity()))
        .collect::<std::result::Result<_, _>>()?;
    let orders = [Constraint::Position, Constraint::Velocity, Constraint::Acceleration, Constraint::Jerk];
    let mut trackers: Vec<Tracker> = orders.iter().map(|c| Tracker::new(*c, LIMIT_TOLERANCE, 0.0)).collect();
    for (i, s) in samples.iter().enumerate() {
        for (k, tr) in trackers.iter_mut().enumerate() {
            for j in 0..d {
                let l = model.dof_limits(j);
                let iv = [l.position, l.velocity, l.acceleration, l.jerk][k];
                tr.observe(iv.excess(s.order(k)[j]), s.t, i, Some(j));
            }
        }
    }
    let self_cfg = SelfCollisionConfig::default();
    let self_pen: Vec<f64> = states
        .par_iter()
        .map(|st| collision::self_collision(model, &st.sphere_centers, &self_cfg).map(|r| r.max_penetration))
        .collect::<std::result::Result<_, _>>()?;
    let mut self_tr = Tracker::new(Constraint::SelfCollision, VALIDATION_PENETRATION, f64::NEG_INFINITY);
    for (i, v) in self_pen.iter().enumerate() {
        self_tr.observe(*v, samples[i].t, i, None);
    }
    trackers.push(self_tr);
    if let Some(w) = world {
        let scene_pen: Vec<f64> = states
            .par_iter()
            .map(|st| {
                collision::scene_static(w, &st.sphere_centers, &st.sphere_radii, &SceneConfig::default())
                    .map(|r| r.max_penetration)
            })
            .collect::<std::result::Result<_, _>>()?;
        let mut tr = Tracker::new(Constraint::SceneCollision, VALIDATION_PENETRATION, f64::NEG_INFINITY);
        for (i, v) in scene_pen.iter().enumerate() {
            tr.observe(*v, samples[i].t, i, None);
        }
        trackers.push(tr);
    }
    let last = samples.len() - 1;
    let end = &samples[last];
    if !goals.is_empty() {
        let mut tr = Tracker::new(Constraint::Goal, 1.0, 0.0);
        for goal in goals {
            let l = model
                .link_index(&goal.link)
                .ok_or_else(|| IkError::UnknownLink(goal.link.clone()))?;
            let (pe, re) = goal.errors(&states[last].link_poses[l]);
            let mut v = 0.0f64;
            if goal.weight_pos > 0.0 {
                v = v.max(pe / goal.position_tol);
            }
            if goal.weight_rot > 0.0 {
                v = v.max(re / goal.orientation_tol);
            }
            tr.observe(v, end.t, last, None);
        }
        trackers.push(tr);
    }
    let mut rest = Tracker::new(Constraint::TerminalRest, REST_TOLERANCE, 0.0);
    for j in 0..d {
        rest.observe(end.theta_dot[j].abs().max(end.theta_ddot[j].abs()), end.t, last, Some(j));
    }
    trackers.push(rest);
    if model.has_inertia() {
        let dm = match payload {
            Some(p) => p.apply(model)?,
            None => model.clone(),
        };
        let g = Vector3::from(gravity);
        let torques = torques(&dm, samples, &g)?;
        let mut tr = Tracker::new(Constraint::Torque, LIMIT_TOLERANCE, 0.0);
        for (i, tau) in torques.iter().enumerate() {
            for (j, t) in tau.iter().enumerate() {
                tr.observe(model.dof_limits(j).torque.excess(*t), samples[i].t, i, Some(j));
            }
        }
        trackers.push(tr);
    }
    Ok(ViolationReport {
        checks: trackers.into_iter().map(|t| t.check).collect(),
    })
}

/// Inverse-dynamics torques at every sample.
pub fn torques(model: &RobotModel, samples: &[StateSample], gravity: &Vector3<f64>) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .map(|s| Ok(rnea(model, &s.theta, &s.theta_dot, &s.theta_ddot, None, gravity)?.0))
        .collect()
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub spline: SplineTrajectory,
    pub samples: Vec<StateSample>,
    /// Per-sample torques under the payload, present when dynamics are enabled.
    pub torques: Option<Vec<Vec<f64>>>,
    pub cost_breakdown: CostBreakdown,
    pub feasible: bool,
    /// Validation at [`VALIDATION_DENSITY`] times the optimization density.
    pub violation_report: ViolationReport,
    pub goal_configuration: Vec<f64>,
    pub seed_index: usize,
    pub iterations: usize,
}

/// Collision-free goal configurations, deduplicated and ordered by joint
/// distance from `start`.
pub fn goal_configurations(model: &RobotModel, problem: &PlanProblem) -> Result<Vec<Vec<f64>>> {
    let config = IkConfig {
        scene: problem.scene,
        self_collision: problem.self_collision,
        ..IkConfig::default()
    };
    let seeds = ik::generate_seeds(model, problem.ik_seeds, problem.rng_seed);
    let results =
        ik::solve_ik_collision_free(model, &problem.goals, &seeds, problem.world.as_deref(), &config)?;
    let dist = |q: &[f64]| {
        q.iter()
            .zip(&problem.start.theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut out: Vec<Vec<f64>> = Vec::new();
    for r in results.into_iter().filter(|r| r.feasible()) {
        let dup = out.iter().any(|q| {
            q.iter().zip(&r.q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < 1e-3
        });
        if !dup {
            out.push(r.q);
        }
    }
    // stable sort keeps the IK order among equal distances
    out.sort_by(|a, b| dist(a).total_cmp(&dist(b)));
    if out.is_empty() {
        return Err(TrajoptError::NoGoalConfiguration);
    }
    Ok(out)
}

/// Free control points on the joint-space line from the start to `goal`.
/// Seeds with `level > 0` move the interior points by low-discrepancy offsets
/// of up to 5% of each joint's range; the last point stays on the goal.
pub fn seed_control_points(model: &RobotModel, start: &[f64], goal: &[f64], k: usize, seed: usize, level: usize) -> DMatrix<f64> {
    let d = start.len();
    let bounds = ik::sampling_bounds(model);
    DMatrix::from_fn(d, k, |j, c| {
        let s = (c + 1) as f64 / k as f64;
        let base = start[j] + s * (goal[j] - start[j]);
        if level == 0 || c + 1 == k {
            return base;
        }
        let h = halton((seed * k + c + 1) as u64, PRIMES[j % PRIMES.len()]);
        let range = bounds[j].hi - bounds[j].lo;
        bounds[j].clamp(base + 0.05 * range * (2.0 * h - 1.0))
    })
}

/// Optimizes `seed_count` seeds and returns the best one: the cheapest
/// feasible plan, or the least violating one when none is feasible.
pub fn plan(model: &RobotModel, problem: &PlanProblem) -> Result<PlanResult> {
    let cost = CostModel::new(model, problem)?;
    let goals = goal_configurations(model, problem)?;
    let d = model.dof();
    let k = problem.segments;
    let seeds: Vec<(usize, DMatrix<f64>)> = (0..problem.seed_count)
        .map(|s| {
            let g = s % goals.len();
            let level = s / goals.len();
            (g, seed_control_points(model, &problem.start.theta, &goals[g], k, s, level))
        })
        .collect();
    let flat: Vec<DVector<f64>> = seeds
        .iter()
        .map(|(_, m)| DVector::from_column_slice(m.as_slice()))
        .collect();
    let objective = |x: &DVector<f64>| -> (f64, DVector<f64>) {
        let cp = DMatrix::from_column_slice(d, k, x.as_slice());
        match problem.spline(cp).and_then(|s| cost.evaluate(&s)) {
            Ok((f, g, _)) => (f, DVector::from_column_slice(g.as_slice())),
            Err(_) => (f64::INFINITY, DVector::zeros(x.len())),
        }
    };
    let runs = lbfgs_minimize_batch(&objective, &flat, &problem.lbfgs);
    let mut results = Vec::with_capacity(runs.len());
    for (s, run) in runs.into_iter().enumerate() {
        let run = run?;
        let cp = DMatrix::from_column_slice(d, k, run.q.as_slice());
        results.push(finish(model, problem, &cost, cp, goals[seeds[s].0].clone(), s, run.iterations)?);
    }
    let best = results
        .into_iter()
        .min_by(|a, b| {
            let key = |r: &PlanResult| (!r.feasible, r.violation_report.score());
            let (fa, (na, ea)) = key(a);
            let (fb, (nb, eb)) = key(b);
            fa.cmp(&fb)
                .then(if fa { na.cmp(&nb).then(ea.total_cmp(&eb)) } else { std::cmp::Ordering::Equal })
                .then(a.cost_breakdown.total.total_cmp(&b.cost_breakdown.total))
                .then(a.seed_index.cmp(&b.seed_index))
        })
        .expect("at least one seed");
    Ok(best)
}

fn finish(
    model: &RobotModel,
    problem: &PlanProblem,
    cost: &CostModel,
    control_points: DMatrix<f64>,
    goal_configuration: Vec<f64>,
    seed_index: usize,
    iterations: usize,
) -> Result<PlanResult> {
    let spline = problem.spline(control_points)?;
    let (_, _, cost_breakdown) = cost.evaluate(&spline)?;
    let samples = spline.sample_uniform();
    let torques = match &cost.dynamics {
        Some(dm) => Some(torques(dm, &samples, &cost.gravity)?),
        None => None,
    };
    let dense = spline.sample_with(VALIDATION_DENSITY * spline.n_interp);
    let violation_report = validate_trajectory(
        model,
        problem.world.as_deref(),
        &dense,
        problem.payload.as_ref(),
        &problem.goals,
        problem.gravity,
    )?;
    Ok(PlanResult {
        spline,
        samples,
        torques,
        cost_breakdown,
        feasible: violation_report.is_feasible(),
        violation_report,
        goal_configuration,
        seed_index,
        iterations,
    })
}

/// CSV with header `t,q0..,qd0..,qdd0..[,tau0..]`, one row per sample.
pub fn write_csv<W: Write>(w: W, samples: &[StateSample], torques: Option<&[Vec<f64>]>) -> csv::Result<()> {
    let d = samples.first().map_or(0, |s| s.theta.len());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    for prefix in ["q", "qd", "qdd"] {
        header.extend((0..d).map(|j| format!("{prefix}{j}")));
    }
    if torques.is_some() {
        header.extend((0..d).map(|j| format!("tau{j}")));
    }
    out.write_record(&header)?;
    for (i, s) in samples.iter().enumerate() {
        let mut row = vec![s.t.to_string()];
        for v in s.theta.iter().chain(&s.theta_dot).chain(&s.theta_ddot) {
            row.push(v.to_string());
        }
        if let Some(t) = torques {
            row.extend(t[i].iter().map(|v| v.to_string()));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
