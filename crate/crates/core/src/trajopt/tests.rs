use super::*;
use crate::bspline::ghost_points;
use crate::esdf::from_shapes;
use crate::fixtures::{self, model, obstacle_scene, payload_arm, payload_problem, planar_arm, tool_goal};
use crate::robot::document::LimitValue;
use crate::robot::JointKind;
use crate::solvers::lbfgs_minimize;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arm3() -> RobotModel {
    model(planar_arm(&[0.3, 0.25, 0.2], &[1.0, 0.8, 0.5], 0.03, 1))
}

fn free_problem(m: &RobotModel) -> PlanProblem {
    let start = StartState {
        theta: vec![0.3, -0.4, 0.5],
        theta_dot: vec![0.2, -0.1, 0.1],
        theta_ddot: vec![0.0, 0.3, -0.2],
    };
    PlanProblem::new(start, vec![tool_goal(m, &[1.2, 0.6, -0.4])])
}

fn only(weights: CostWeights, keep: &str) -> CostWeights {
    let mut w = CostWeights {
        gamma_smooth: 0.0,
        gamma_length: 0.0,
        gamma_energy: 0.0,
        joint_limit: 0.0,
        scene: 0.0,
        self_collision: 0.0,
        goal: 0.0,
        torque: 0.0,
    };
    match keep {
        "smooth" => w.gamma_smooth = weights.gamma_smooth,
        "length" => w.gamma_length = weights.gamma_length,
        _ => unreachable!(),
    }
    w
}

#[test]
fn stationary_plan_costs_nothing() {
    let m = arm3();
    let q0 = vec![0.4, -0.3, 0.2];
    let mut p = PlanProblem::new(StartState::at_rest(q0.clone()), vec![tool_goal(&m, &q0)]);
    p.enable_dynamics = true;
    let cp = DMatrix::from_fn(3, p.segments, |j, _| q0[j]);
    let (f, g, b) = total_cost(&m, &p, &p.spline(cp).unwrap()).unwrap();
    assert!(f.abs() < 1e-12, "{b:?}");
    for v in [b.smooth, b.length, b.energy, b.joint_limit, b.scene, b.self_collision, b.goal, b.torque] {
        assert!(v.abs() < 1e-12);
    }
    // only round-off in the goal residual, amplified by 1/tolerance²
    assert!(g.amax() < 1e-7, "{g}");
}

#[test]
fn smoothness_matches_hand_computed_sum() {
    let m = arm3();
    let q0 = [0.1, 0.2, -0.3];
    let mut p = PlanProblem::new(StartState::at_rest(q0.to_vec()), vec![tool_goal(&m, &q0)]);
    p.weights = only(CostWeights::default(), "smooth");
    p.weights.gamma_smooth = 1.0;
    let k = 5;
    p.segments = k;
    let cp = DMatrix::from_fn(3, k, |j, c| q0[j] + 0.1 * (c as f64 + 1.0) * (j as f64 + 1.0) + 0.05 * (c * c) as f64);
    let (f, _, _) = total_cost(&m, &p, &p.spline(cp.clone()).unwrap()).unwrap();
    // at rest the anchor and ghosts all equal θ₀; the end repeats the last point
    let g = ghost_points(&q0, &[0.0; 3], &[0.0; 3], p.dt_u);
    assert!((g - DMatrix::from_fn(3, 3, |j, _| q0[j])).amax() < 1e-12);
    let mut pts: Vec<Vec<f64>> = vec![q0.to_vec(); 4];
    pts.extend((0..k).map(|c| cp.column(c).iter().copied().collect()));
    pts.extend(vec![cp.column(k - 1).iter().copied().collect::<Vec<f64>>(); 3]);
    let n = p.n_interp;
    let segs = pts.len() - 3;
    let mut expect = 0.0;
    let dt2 = p.dt_u * p.dt_u;
    let mut add = |s: usize, a: f64| {
        for j in 0..3 {
            let d0 = pts[s][j] - 2.0 * pts[s + 1][j] + pts[s + 2][j];
            let d1 = pts[s + 1][j] - 2.0 * pts[s + 2][j] + pts[s + 3][j];
            let acc = ((1.0 - a) * d0 + a * d1) / dt2;
            expect += acc * acc;
        }
    };
    for s in 0..segs {
        for i in 0..n {
            add(s, i as f64 / n as f64);
        }
    }
    add(segs - 1, 1.0);
    assert!((f - expect).abs() <= 1e-10 * expect, "{f} vs {expect}");
}

/// Arm with an obstacle, dynamics, a payload, torque and velocity limits all
/// active, so every cost term contributes.
fn busy_problem() -> (RobotModel, PlanProblem, DMatrix<f64>) {
    let sc = obstacle_scene();
    let mut doc = sc.robot.clone();
    for j in doc.joints.iter_mut().filter(|j| j.kind == JointKind::Revolute) {
        j.limits.velocity = Some(LimitValue::Symmetric(0.6));
        j.limits.torque = Some(LimitValue::Symmetric(2.0));
    }
    let m = model(doc);
    let world = Arc::new(from_shapes(&sc.obstacles, &sc.esdf).unwrap());
    let mut p = fixtures::obstacle_problem(&m, world, 3);
    p.enable_dynamics = true;
    p.gravity = fixtures::VERTICAL_GRAVITY;
    p.payload = Some(Payload {
        link: "link3".into(),
        mass: 0.4,
        com: [0.2, 0.01, 0.0],
        inertia: [1e-3, 2e-3, 2e-3, 1e-4, 0.0, 0.0],
    });
    let goal = [-0.9, 0.3, 0.3];
    let mut cp = seed_control_points(&m, &p.start.theta, &goal, p.segments, 1, 1);
    // move the end off the goal so the goal term is active
    cp[(0, p.segments - 1)] += 0.01;
    (m, p, cp)
}

#[test]
fn gradient_matches_differences() {
    let (m, p, cp) = busy_problem();
    let cost = CostModel::new(&m, &p).unwrap();
    let eval = |c: &DMatrix<f64>| cost.evaluate(&p.spline(c.clone()).unwrap()).unwrap();
    let (_, g, b) = eval(&cp);
    for v in [b.smooth, b.length, b.energy, b.joint_limit, b.scene, b.goal, b.torque] {
        assert!(v > 0.0, "inactive term in {b:?}");
    }
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..cp.len() {
        let mut a = cp.clone();
        let mut z = cp.clone();
        a[i] += h;
        z[i] -= h;
        let fd = (eval(&a).0 - eval(&z).0) / (2.0 * h);
        let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn accepted_iterations_never_increase_cost() {
    let (m, p, cp) = busy_problem();
    let cost = CostModel::new(&m, &p).unwrap();
    let (d, k) = cp.shape();
    let objective = |x: &DVector<f64>| {
        let (f, g, _) = cost
            .evaluate(&p.spline(DMatrix::from_column_slice(d, k, x.as_slice())).unwrap())
            .unwrap();
        (f, DVector::from_column_slice(g.as_slice()))
    };
    let mut cfg = p.lbfgs;
    cfg.max_iters = 60;
    let r = lbfgs_minimize(&objective, DVector::from_column_slice(cp.as_slice()), &cfg).unwrap();
    assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    assert!(r.value < r.trace[0]);
}

#[test]
fn free_space_plan_is_exact_at_both_ends() {
    let m = arm3();
    let p = free_problem(&m);
    let r = plan(&m, &p).unwrap();
    assert!(r.feasible, "{:?}", r.violation_report.violations());
    assert!(r.violation_report.violations().is_empty());
    let first = &r.samples[0];
    let s = &p.start;
    for j in 0..3 {
        assert!((first.theta[j] - s.theta[j]).abs() < 1e-9);
        assert!((first.theta_dot[j] - s.theta_dot[j]).abs() < 1e-9);
        assert!((first.theta_ddot[j] - s.theta_ddot[j]).abs() < 1e-9);
    }
    let last = r.samples.last().unwrap();
    assert!(last.theta_dot.iter().chain(&last.theta_ddot).all(|v| v.abs() < 1e-9));
    let poses = crate::kinematics::link_poses(&m, &last.theta, &Pose::identity());
    assert!(p.goals[0].satisfied(&poses[m.link_index("tool").unwrap()]));
    assert!(r.torques.is_none());
}

#[test]
fn plans_are_deterministic() {
    let m = arm3();
    let p = free_problem(&m);
    let a = plan(&m, &p).unwrap();
    let b = plan(&m, &p).unwrap();
    assert_eq!(a.spline, b.spline);
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.cost_breakdown, b.cost_breakdown);
    assert_eq!(a.seed_index, b.seed_index);
}

#[test]
fn obstacle_plan_keeps_clear_at_dense_sampling() {
    let sc = obstacle_scene();
    let m = model(sc.robot.clone());
    let world = Arc::new(from_shapes(&sc.obstacles, &sc.esdf).unwrap());
    let p = fixtures::obstacle_problem(&m, world.clone(), 0);
    let r = plan(&m, &p).unwrap();
    assert!(r.feasible, "{:?}", r.violation_report.violations());
    let dense = r.spline.sample_with(VALIDATION_DENSITY * p.n_interp);
    let rep = validate_trajectory(&m, Some(&world), &dense, None, &p.goals, p.gravity).unwrap();
    assert!(rep.get(Constraint::SceneCollision).unwrap().worst <= 1e-3);
    // the straight line to the chosen goal configuration would not have been
    let line = seed_control_points(&m, &p.start.theta, &r.goal_configuration, p.segments, 0, 0);
    let dense = p.spline(line).unwrap().sample_with(VALIDATION_DENSITY * p.n_interp);
    let rep = validate_trajectory(&m, Some(&world), &dense, None, &p.goals, p.gravity).unwrap();
    assert!(rep.get(Constraint::SceneCollision).unwrap().worst > 0.01);
}

#[test]
fn payload_needs_dynamics_aware_planning() {
    let m = model(payload_arm(fixtures::PAYLOAD_TORQUE_LIMITS));
    let mut p = payload_problem(&m, 0);
    let kinematic = plan(&m, &p).unwrap();
    assert!(kinematic.violation_report.kinematic_feasible());
    let v = kinematic.violation_report.violations();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].constraint, Constraint::Torque);
    assert!(v[0].worst > 1.0);
    p.enable_dynamics = true;
    let dynamic = plan(&m, &p).unwrap();
    assert!(dynamic.feasible, "{:?}", dynamic.violation_report.violations());
    let tau = dynamic.torques.as_ref().unwrap();
    assert_eq!(tau.len(), dynamic.samples.len());
    // without the payload the kinematic plan is within limits
    let rep = validate_trajectory(&m, None, &kinematic.spline.sample_with(16), None, &p.goals, p.gravity).unwrap();
    assert!(rep.is_feasible(), "{:?}", rep.violations());
}

#[test]
fn injected_velocity_fault_is_reported_alone() {
    let m = model(payload_arm([1e6, 1e6]));
    let p = payload_problem(&m, 1);
    let r = plan(&m, &p).unwrap();
    assert!(r.feasible);
    let mut samples = r.spline.sample_with(VALIDATION_DENSITY * p.n_interp);
    let rep = validate_trajectory(&m, None, &samples, p.payload.as_ref(), &p.goals, p.gravity).unwrap();
    assert!(rep.violations().is_empty());
    let i = samples.len() / 3;
    samples[i].theta_dot[1] = 3.25;
    let rep = validate_trajectory(&m, None, &samples, p.payload.as_ref(), &p.goals, p.gravity).unwrap();
    let v = rep.violations();
    assert_eq!(v.len(), 1, "{v:?}");
    assert_eq!(v[0].constraint, Constraint::Velocity);
    assert_eq!(v[0].sample, i);
    assert_eq!(v[0].t, samples[i].t);
    assert_eq!(v[0].dof, Some(1));
    assert!((v[0].worst - 0.25).abs() < 1e-12);
}

#[test]
fn problem_errors() {
    let m = arm3();
    let massless = model(planar_arm(&[0.3, 0.25, 0.2], &[0.0, 0.0, 0.0], 0.03, 1));
    let mut p = free_problem(&m);
    p.enable_dynamics = true;
    assert!(matches!(CostModel::new(&massless, &p), Err(TrajoptError::NoInertia)));
    let mut q = free_problem(&m);
    q.segments = 3;
    assert!(matches!(plan(&m, &q), Err(TrajoptError::InvalidProblem(_))));
    let mut q = free_problem(&m);
    q.start.theta[0] = 4.0;
    assert!(matches!(plan(&m, &q), Err(TrajoptError::InvalidProblem(_))));
    let mut q = free_problem(&m);
    q.weights.scene = -1.0;
    assert!(matches!(plan(&m, &q), Err(TrajoptError::InvalidProblem(_))));
    let mut q = free_problem(&m);
    q.goals = vec![GoalSpec::position("tool", Vector3::new(2.0, 0.0, 0.0))];
    assert!(matches!(plan(&m, &q), Err(TrajoptError::NoGoalConfiguration)));
}

#[test]
fn seeds_follow_the_line() {
    let m = arm3();
    let start = [0.1, 0.2, 0.3];
    let goal = [1.1, -0.8, 0.3];
    let line = seed_control_points(&m, &start, &goal, 6, 0, 0);
    for c in 0..6 {
        let s = (c + 1) as f64 / 6.0;
        for j in 0..3 {
            assert!((line[(j, c)] - (start[j] + s * (goal[j] - start[j]))).abs() < 1e-15);
        }
    }
    let a = seed_control_points(&m, &start, &goal, 6, 3, 1);
    assert_eq!(a, seed_control_points(&m, &start, &goal, 6, 3, 1));
    assert_ne!(a, seed_control_points(&m, &start, &goal, 6, 4, 1));
    let range = 2.0 * std::f64::consts::PI;
    assert!((&a - &line).amax() <= 0.05 * range);
    assert_eq!(a.column(5), line.column(5));
}

#[test]
fn csv_layout() {
    let m = arm3();
    let p = free_problem(&m);
    let spline = p.spline(seed_control_points(&m, &p.start.theta, &[1.0, 0.0, 0.0], p.segments, 0, 0)).unwrap();
    let samples = spline.sample_uniform();
    let tau: Vec<Vec<f64>> = samples.iter().map(|_| vec![1.0, 2.0, 3.0]).collect();
    let mut buf = Vec::new();
    write_csv(&mut buf, &samples, Some(&tau)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,q0,q1,q2,qd0,qd1,qd2,qdd0,qdd1,qdd2,tau0,tau1,tau2");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), samples.len());
    let last: Vec<f64> = rows[rows.len() - 1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last.len(), 13);
    assert_eq!(last[0], samples.last().unwrap().t);
    assert_eq!(last[1], samples.last().unwrap().theta[0]);
    let mut buf = Vec::new();
    write_csv(&mut buf, &samples, None).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("t,q0,q1,q2,qd0,qd1,qd2,qdd0,qdd1,qdd2\n"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn anchored_ends_hold_for_any_control_points(seed in any::<u64>()) {
        let m = arm3();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || rng.gen_range(-1.0..1.0);
        let start = StartState {
            theta: vec![v(), v(), v()],
            theta_dot: vec![v(), v(), v()],
            theta_ddot: vec![v(), v(), v()],
        };
        let mut p = PlanProblem::new(start, vec![tool_goal(&m, &[0.0; 3])]);
        p.segments = 4 + (seed % 5) as usize;
        let cp = DMatrix::from_fn(3, p.segments, |_, _| v());
        let samples = p.spline(cp).unwrap().sample_uniform();
        let first = &samples[0];
        for j in 0..3 {
            prop_assert!((first.theta[j] - p.start.theta[j]).abs() < 1e-9);
            prop_assert!((first.theta_dot[j] - p.start.theta_dot[j]).abs() < 1e-9);
            prop_assert!((first.theta_ddot[j] - p.start.theta_ddot[j]).abs() < 1e-9);
        }
        let last = samples.last().unwrap();
        prop_assert!(last.theta_dot.iter().chain(&last.theta_ddot).all(|x| x.abs() < 1e-9));
    }
}
