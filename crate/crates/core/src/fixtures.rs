//! Small reference robots used by the examples, tests and benchmarks.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::Rng;

use crate::robot::document::{
    JointDoc, LimitValue, LimitsDoc, LinkDoc, MimicDoc, OriginDoc, RobotDocument, SphereDoc,
};
use crate::esdf::{DenseEsdf, EsdfConfig, Seeding};
use crate::geometry::Shape;
use crate::ik::GoalSpec;
use crate::kinematics::link_poses;
use crate::pose::Pose;
use crate::robot::{JointKind, RobotModel};
use crate::trajopt::{Payload, PlanProblem, StartState};

fn link(name: &str, mass: f64, com: [f64; 3], inertia: [f64; 6], spheres: Vec<SphereDoc>) -> LinkDoc {
    LinkDoc {
        name: name.into(),
        mass,
        com,
        inertia,
        spheres,
    }
}

fn joint(name: &str, kind: JointKind, parent: &str, child: &str, axis: [f64; 3], xyz: [f64; 3]) -> JointDoc {
    JointDoc {
        name: name.into(),
        kind,
        parent: parent.into(),
        child: child.into(),
        axis: (kind != JointKind::Fixed).then_some(axis),
        origin: OriginDoc { xyz, rpy: [0.0; 3] },
        limits: LimitsDoc::default(),
        mimic: None,
    }
}

/// Single revolute joint about z; point-like bob of `mass` at `(length, 0, 0)`
/// with rotational inertia `izz` about its center of mass.
pub fn pendulum(mass: f64, length: f64, izz: f64) -> RobotDocument {
    RobotDocument {
        links: vec![
            link("base", 0.0, [0.0; 3], [0.0; 6], vec![]),
            link("arm", mass, [length, 0.0, 0.0], [izz, izz, izz, 0.0, 0.0, 0.0], vec![]),
        ],
        joints: vec![joint("j1", JointKind::Revolute, "base", "arm", [0.0, 0.0, 1.0], [0.0; 3])],
        tool_links: vec!["arm".into()],
        configurations: BTreeMap::new(),
    }
}

/// Planar serial arm in the xy plane with revolute z joints.
///
/// Link `i` (named `link{i}`) starts at the end of link `i-1`, extends along
/// its local x axis by `lengths[i]` and carries `spheres_per_link` spheres of
/// radius `radius` along that segment. A fixed `tool` link sits at the tip.
/// Mass `masses[i]` is at the segment midpoint with slender-rod inertia.
pub fn planar_arm(lengths: &[f64], masses: &[f64], radius: f64, spheres_per_link: usize) -> RobotDocument {
    let mut links = vec![link("base", 0.0, [0.0; 3], [0.0; 6], vec![])];
    let mut joints = Vec::new();
    let mut parent = "base".to_string();
    let mut offset = 0.0;
    for (i, (&l, &m)) in lengths.iter().zip(masses).enumerate() {
        let name = format!("link{}", i + 1);
        let rod = m * l * l / 12.0;
        let spheres = (0..spheres_per_link)
            .map(|s| SphereDoc {
                center: [l * (s as f64 + 0.5) / spheres_per_link as f64, 0.0, 0.0],
                radius,
            })
            .collect();
        links.push(link(&name, m, [0.5 * l, 0.0, 0.0], [1e-4 * m, rod, rod, 0.0, 0.0, 0.0], spheres));
        let mut j = joint(&format!("j{}", i + 1), JointKind::Revolute, &parent, &name, [0.0, 0.0, 1.0], [offset, 0.0, 0.0]);
        j.limits.position = Some([-std::f64::consts::PI, std::f64::consts::PI]);
        joints.push(j);
        parent = name;
        offset = l;
    }
    links.push(link("tool", 0.0, [0.0; 3], [0.0; 6], vec![]));
    joints.push(joint("tool_joint", JointKind::Fixed, &parent, "tool", [0.0; 3], [offset, 0.0, 0.0]));
    let mut configurations = BTreeMap::new();
    configurations.insert("retract".into(), vec![0.0; lengths.len()]);
    RobotDocument {
        links,
        joints,
        tool_links: vec!["tool".into()],
        configurations,
    }
}

/// Three-link planar arm with a two-finger parallel gripper; the right finger
/// mimics the left with multiplier −1.
pub fn mimic_gripper_arm() -> RobotDocument {
    let mut doc = planar_arm(&[0.4, 0.3, 0.2], &[1.0, 0.8, 0.5], 0.04, 2);
    let hand = "tool";
    let mut left = joint("finger_left_joint", JointKind::Prismatic, hand, "finger_left", [0.0, 1.0, 0.0], [0.05, 0.02, 0.0]);
    left.limits.position = Some([0.0, 0.04]);
    left.limits.velocity = Some(LimitValue::Symmetric(0.1));
    let mut right = joint("finger_right_joint", JointKind::Prismatic, hand, "finger_right", [0.0, 1.0, 0.0], [0.05, -0.02, 0.0]);
    right.mimic = Some(MimicDoc {
        source: "finger_left_joint".into(),
        multiplier: -1.0,
        offset: 0.0,
    });
    let finger = |name: &str| {
        link(
            name,
            0.05,
            [0.02, 0.0, 0.0],
            [1e-5, 1e-5, 1e-5, 0.0, 0.0, 0.0],
            vec![SphereDoc { center: [0.02, 0.0, 0.0], radius: 0.01 }],
        )
    };
    doc.links.push(finger("finger_left"));
    doc.links.push(finger("finger_right"));
    doc.joints.push(left);
    doc.joints.push(right);
    doc.tool_links.push("finger_left".into());
    doc.tool_links.push("finger_right".into());
    doc.configurations.insert("retract".into(), vec![0.0; 4]);
    doc
}

fn random_unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.2 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Random inertial parameters with a positive definite rotational inertia.
pub fn random_inertial<R: Rng>(rng: &mut R) -> (f64, [f64; 3], [f64; 6]) {
    let mass = rng.gen_range(0.2..2.0);
    let com = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
    // diagonal-dominant symmetric matrix
    let off = [rng.gen_range(-0.002..0.002), rng.gen_range(-0.002..0.002), rng.gen_range(-0.002..0.002)];
    let diag = [rng.gen_range(0.01..0.05), rng.gen_range(0.01..0.05), rng.gen_range(0.01..0.05)];
    (mass, com, [diag[0], diag[1], diag[2], off[0], off[1], off[2]])
}

/// Random kinematic tree of `n_links` links with at most `max_branches`
/// children per link. Joints are revolute or prismatic with random axes and
/// origins; with `fixed_and_mimic` set, one joint is fixed and one joint
/// mimics an earlier actuated joint.
pub fn random_tree<R: Rng>(rng: &mut R, n_links: usize, max_branches: usize, fixed_and_mimic: bool) -> RobotDocument {
    assert!(n_links >= 2);
    let mut links = Vec::new();
    let mut joints: Vec<JointDoc> = Vec::new();
    let mut child_count = vec![0usize; n_links];
    for i in 0..n_links {
        let (mass, com, inertia) = random_inertial(rng);
        let spheres = vec![SphereDoc { center: com, radius: rng.gen_range(0.02..0.06) }];
        links.push(link(&format!("l{i}"), mass, com, inertia, spheres));
        if i == 0 {
            continue;
        }
        let parent = loop {
            let p = rng.gen_range(0..i);
            if child_count[p] < max_branches {
                break p;
            }
        };
        child_count[parent] += 1;
        let kind = if rng.gen_bool(0.75) { JointKind::Revolute } else { JointKind::Prismatic };
        let xyz = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(0.05..0.3)];
        let mut j = joint(&format!("j{i}"), kind, &format!("l{parent}"), &format!("l{i}"), random_unit(rng), xyz);
        j.origin.rpy = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        joints.push(j);
    }
    if fixed_and_mimic && joints.len() >= 3 {
        let last = joints.len() - 1;
        joints[last].kind = JointKind::Fixed;
        joints[last].axis = None;
        let src = joints[0].name.clone();
        let k = joints.len() - 2;
        joints[k].mimic = Some(MimicDoc {
            source: src,
            multiplier: rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            offset: rng.gen_range(-0.3..0.3),
        });
    }
    let tool = format!("l{}", n_links - 1);
    RobotDocument {
        links,
        joints,
        tool_links: vec![tool],
        configurations: BTreeMap::new(),
    }
}

pub fn model(doc: RobotDocument) -> RobotModel {
    RobotModel::from_document(doc).expect("fixture robot is valid")
}

/// [`random_tree`] retried until at least one link has two or more children.
pub fn branched_tree<R: Rng>(rng: &mut R, n_links: usize, fixed_and_mimic: bool) -> RobotDocument {
    loop {
        let doc = random_tree(rng, n_links, 3, fixed_and_mimic);
        let mut counts = BTreeMap::new();
        for j in &doc.joints {
            *counts.entry(j.parent.clone()).or_insert(0) += 1;
        }
        if counts.values().any(|&c| c >= 2) {
            return doc;
        }
    }
}

/// Planar three-link arm (lengths 0.3, 0.25, 0.2) with a box that blocks the
/// elbow-down solution of the tool pose `target`.
///
/// The tool pose admits exactly two arm configurations; the elbow-down one
/// puts the elbow (origin of `link2`) inside `obstacle`, the elbow-up one is
/// clear of it by more than 0.3 m.
pub struct BlockedBranch {
    pub robot: RobotDocument,
    pub obstacle: Shape,
    pub target: Pose,
}

pub fn blocked_branch() -> BlockedBranch {
    let mut robot = planar_arm(&[0.3, 0.25, 0.2], &[1.0, 0.8, 0.5], 0.03, 4);
    for j in robot.joints.iter_mut().filter(|j| j.kind == JointKind::Revolute) {
        j.limits.position = Some([-2.8, 2.8]);
    }
    BlockedBranch {
        robot,
        obstacle: Shape::cuboid([0.22, -0.2, 0.0], [0.1, 0.08, 0.3]),
        target: Pose::from_translation(Vector3::new(0.5, 0.1, 0.0)),
    }
}

/// Whether the elbow lies left of the ray from the base to the wrist.
pub fn elbow_up(link_poses: &[Pose]) -> bool {
    let elbow = link_poses[2].translation;
    let wrist = link_poses[3].translation;
    elbow.y * wrist.x - elbow.x * wrist.y > 0.0
}

/// [`planar_arm`] with unit masses, one sphere of radius 0.03 per link and
/// no position limits.
pub fn continuous_arm(lengths: &[f64]) -> RobotDocument {
    let mut doc = planar_arm(lengths, &vec![1.0; lengths.len()], 0.03, 1);
    for j in doc.joints.iter_mut() {
        j.limits.position = None;
    }
    doc
}

/// Gravity for the planar fixtures when they are treated as vertical arms.
pub const VERTICAL_GRAVITY: [f64; 3] = [0.0, -9.81, 0.0];

/// Two-link arm [0.4, 0.3] m with link masses [2, 1.5] kg for use in the
/// vertical plane, elbow limited to ±2.8 rad, velocities to ±3 rad/s,
/// accelerations to ±15 rad/s² and torques to `torque` N·m per joint.
pub fn payload_arm(torque: [f64; 2]) -> RobotDocument {
    let mut doc = planar_arm(&[0.4, 0.3], &[2.0, 1.5], 0.03, 2);
    for (j, t) in doc.joints.iter_mut().filter(|j| j.kind == JointKind::Revolute).zip(torque) {
        j.limits.velocity = Some(LimitValue::Symmetric(3.0));
        j.limits.acceleration = Some(LimitValue::Symmetric(15.0));
        j.limits.torque = Some(LimitValue::Symmetric(t));
    }
    doc.joints[1].limits.position = Some([-2.8, 2.8]);
    doc
}

/// Tool payload carried by [`payload_arm`] in the planning fixtures.
pub fn tool_payload() -> Payload {
    Payload::point("link2", 3.0, [0.3, 0.0, 0.0])
}

/// Torque limits for [`payload_arm`]: below the shoulder torque of swinging
/// the outstretched arm with [`tool_payload`] through the horizontal (about
/// 32.6 N·m), above what an elbow-folded swing needs.
pub const PAYLOAD_TORQUE_LIMITS: [f64; 2] = [24.0, 14.0];

/// Swing of [`payload_arm`] from hanging near straight down to reaching near
/// straight up; `i` varies the start and goal deterministically.
pub fn payload_problem(model: &RobotModel, i: usize) -> PlanProblem {
    let u = (i as f64 * 0.618).fract() - 0.5;
    let v = (i as f64 * 0.414).fract() - 0.5;
    let start = vec![-FRAC_PI_2 + 0.4 * u, 0.6 * v];
    let goal_q = [FRAC_PI_2 - 0.4 * v, 0.6 * u];
    let mut p = PlanProblem::new(StartState::at_rest(start), vec![tool_goal(model, &goal_q)]);
    p.gravity = VERTICAL_GRAVITY;
    p.payload = Some(tool_payload());
    p
}

/// Position goal for the `tool` link at its location in configuration `q`.
pub fn tool_goal(model: &RobotModel, q: &[f64]) -> GoalSpec {
    let poses = link_poses(model, q, &Pose::identity());
    let tool = model.link_index("tool").expect("fixture has a tool link");
    GoalSpec::position("tool", poses[tool].translation)
}

/// Three-link planar arm (reach 0.75 m) with a box on the x axis spanning
/// 0.61 to 0.71 m, between the start and goal of every [`obstacle_problem`].
/// Passing it needs the arm folded below its full reach.
pub struct ObstacleScene {
    pub robot: RobotDocument,
    pub obstacles: Vec<Shape>,
    pub esdf: EsdfConfig,
}

pub fn obstacle_scene() -> ObstacleScene {
    ObstacleScene {
        robot: planar_arm(&[0.3, 0.25, 0.2], &[1.0, 0.8, 0.5], 0.03, 4),
        obstacles: vec![Shape::cuboid([0.66, 0.0, 0.0], [0.05, 0.05, 0.2])],
        esdf: EsdfConfig::covering(Vector3::new(-0.9, -0.9, -0.1), Vector3::new(0.9, 0.9, 0.1), 0.01, Seeding::Scatter),
    }
}

/// Sweep from above the box to below it; the joint-space line between the
/// two passes the outstretched arm through the box.
pub fn obstacle_problem(model: &RobotModel, world: Arc<DenseEsdf>, i: usize) -> PlanProblem {
    let u = (i as f64 * 0.618).fract() - 0.5;
    let v = (i as f64 * 0.414).fract() - 0.5;
    let start = vec![0.9 + 0.2 * u, -0.3 + 0.2 * v, -0.3];
    let goal_q = [-0.9 - 0.2 * v, 0.3 + 0.2 * u, 0.3];
    let mut p = PlanProblem::new(StartState::at_rest(start), vec![tool_goal(model, &goal_q)]);
    p.world = Some(world);
    p
}
