//! Robot description: kinematic tree, joint semantics (including mimic
//! coupling), collision spheres, inertial parameters, limits and the
//! precomputed topology cache used by the kinematics and dynamics passes.

pub mod document;
mod pruning;
mod topology;

use std::collections::{BTreeMap, HashMap, VecDeque};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::Pose;
use document::{
    JointDoc, LimitValue, LimitsDoc, LinkDoc, MimicDoc, OriginDoc, RobotDocument, SphereDoc,
};

pub use pruning::{build_self_collision_pairs, build_self_collision_pairs_with, halton, PruningOptions};
pub use topology::TopologyCache;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed robot document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate {kind} name `{name}`")]
    Duplicate { kind: &'static str, name: String },
    #[error("joint `{joint}` references undeclared link `{link}`")]
    DanglingLink { joint: String, link: String },
    #[error("link `{link}` has more than one parent joint (`{first}`, `{second}`)")]
    MultipleParents {
        link: String,
        first: String,
        second: String,
    },
    #[error("expected exactly one root link, found {roots:?}")]
    RootCount { roots: Vec<String> },
    #[error("kinematic cycle through joints {joints:?}")]
    Cycle { joints: Vec<String> },
    #[error("joint `{joint}`: invalid mimic: {reason}")]
    InvalidMimic { joint: String, reason: String },
    #[error("joint `{joint}`: empty {which} limit interval [{lo}, {hi}]")]
    EmptyInterval {
        joint: String,
        which: &'static str,
        lo: f64,
        hi: f64,
    },
    #[error("{element}: {reason}")]
    Invalid { element: String, reason: String },
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("missing named configuration `{0}`")]
    MissingConfiguration(String),
}

fn invalid(element: impl Into<String>, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        element: element.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

/// Closed interval `[lo, hi]`; either bound may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn symmetric(v: f64) -> Self {
        Self { lo: -v, hi: v }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Distance by which `x` lies outside the interval (0 inside).
    pub fn excess(&self, x: f64) -> f64 {
        if x > self.hi {
            x - self.hi
        } else if x < self.lo {
            self.lo - x
        } else {
            0.0
        }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// Interval shrunk towards its midpoint by `fraction` of its half-width
    /// on each side (bounded sides only).
    pub fn shrink(&self, fraction: f64) -> Interval {
        if self.is_bounded() {
            let mid = 0.5 * (self.lo + self.hi);
            let half = 0.5 * (self.hi - self.lo) * (1.0 - fraction);
            Interval::new(mid - half, mid + half)
        } else {
            Interval::new(self.lo * (1.0 - fraction), self.hi * (1.0 - fraction))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub position: Interval,
    pub velocity: Interval,
    pub acceleration: Interval,
    pub jerk: Interval,
    pub torque: Interval,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            position: Interval::UNBOUNDED,
            velocity: Interval::UNBOUNDED,
            acceleration: Interval::UNBOUNDED,
            jerk: Interval::UNBOUNDED,
            torque: Interval::UNBOUNDED,
        }
    }
}

/// `θ_mimic = multiplier · θ_source + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mimic {
    pub source: String,
    pub multiplier: f64,
    pub offset: f64,
}

/// Joint origin as written in the description (translation + extrinsic XYZ Euler).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Origin {
    pub xyz: [f64; 3],
    pub rpy: [f64; 3],
}

impl Origin {
    pub fn pose(&self) -> Pose {
        Pose::from_xyz_rpy(self.xyz, self.rpy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub parent_link: String,
    pub child_link: String,
    pub origin: Origin,
    pub limits: JointLimits,
    pub mimic: Option<Mimic>,
}

impl JointSpec {
    pub fn is_actuated(&self) -> bool {
        self.kind != JointKind::Fixed && self.mimic.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionSphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub name: String,
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass, link frame.
    pub inertia: Matrix3<f64>,
    pub spheres: Vec<CollisionSphere>,
}

/// Resolved motion of a non-root link relative to its parent link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkJoint {
    /// Index into [`RobotModel::joints`].
    pub joint: usize,
    pub parent: usize,
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub origin: Pose,
    /// Actuated joint driving this link (mimic links map to their source).
    pub dof: Option<usize>,
    pub multiplier: f64,
    pub offset: f64,
}

impl LinkJoint {
    /// Joint coordinate of this link for the actuated vector `q`.
    pub fn value(&self, q: &[f64]) -> f64 {
        match self.dof {
            Some(j) => self.multiplier * q[j] + self.offset,
            None => 0.0,
        }
    }

    /// Transform from the parent link frame to this link frame at joint value `theta`.
    pub fn local_pose(&self, theta: f64) -> Pose {
        match self.kind {
            JointKind::Fixed => self.origin,
            JointKind::Revolute => Pose {
                rotation: self.origin.rotation * crate::pose::axis_angle_matrix(&self.axis, theta),
                translation: self.origin.translation,
            },
            JointKind::Prismatic => Pose {
                rotation: self.origin.rotation,
                translation: self.origin.translation + self.origin.rotation * (self.axis * theta),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    links: Vec<LinkSpec>,
    joints: Vec<JointSpec>,
    dof: usize,
    cache: TopologyCache,
    tool_links: Vec<String>,
    named_configurations: BTreeMap<String, Vec<f64>>,
    link_joints: Vec<Option<LinkJoint>>,
    actuated: Vec<usize>,
    tool_indices: Vec<usize>,
    sphere_link: Vec<usize>,
    body_of_link: Vec<usize>,
}

/// Parses and validates a robot description document.
pub fn load_robot(document: &str) -> Result<RobotModel, ModelError> {
    let doc: RobotDocument = serde_json::from_str(document)?;
    RobotModel::from_document(doc)
}

impl RobotModel {
    pub fn from_document(doc: RobotDocument) -> Result<Self, ModelError> {
        let mut link_names: HashMap<&str, usize> = HashMap::new();
        for (i, l) in doc.links.iter().enumerate() {
            if link_names.insert(l.name.as_str(), i).is_some() {
                return Err(ModelError::Duplicate {
                    kind: "link",
                    name: l.name.clone(),
                });
            }
        }
        let mut joint_names: HashMap<&str, usize> = HashMap::new();
        for (i, j) in doc.joints.iter().enumerate() {
            if joint_names.insert(j.name.as_str(), i).is_some() {
                return Err(ModelError::Duplicate {
                    kind: "joint",
                    name: j.name.clone(),
                });
            }
        }

        // parent joint of each (document-order) link
        let mut parent_joint: Vec<Option<usize>> = vec![None; doc.links.len()];
        for (ji, j) in doc.joints.iter().enumerate() {
            for link in [&j.parent, &j.child] {
                if !link_names.contains_key(link.as_str()) {
                    return Err(ModelError::DanglingLink {
                        joint: j.name.clone(),
                        link: link.clone(),
                    });
                }
            }
            let child = link_names[j.child.as_str()];
            if let Some(prev) = parent_joint[child] {
                return Err(ModelError::MultipleParents {
                    link: j.child.clone(),
                    first: doc.joints[prev].name.clone(),
                    second: j.name.clone(),
                });
            }
            parent_joint[child] = Some(ji);
        }

        let roots: Vec<usize> = (0..doc.links.len())
            .filter(|&i| parent_joint[i].is_none())
            .collect();
        if roots.len() != 1 {
            if roots.is_empty() && !doc.links.is_empty() {
                return Err(ModelError::Cycle {
                    joints: find_cycle(&doc, &parent_joint, &link_names, 0),
                });
            }
            return Err(ModelError::RootCount {
                roots: roots.iter().map(|&i| doc.links[i].name.clone()).collect(),
            });
        }

        // breadth-first order from the root; children in joint document order
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); doc.links.len()];
        for j in &doc.joints {
            children[link_names[j.parent.as_str()]].push(link_names[j.child.as_str()]);
        }
        let mut order = Vec::with_capacity(doc.links.len());
        let mut queue = VecDeque::from([roots[0]]);
        let mut seen = vec![false; doc.links.len()];
        seen[roots[0]] = true;
        while let Some(l) = queue.pop_front() {
            order.push(l);
            for &c in &children[l] {
                if !seen[c] {
                    seen[c] = true;
                    queue.push_back(c);
                }
            }
        }
        if order.len() != doc.links.len() {
            let start = (0..doc.links.len()).find(|&i| !seen[i]).unwrap();
            return Err(ModelError::Cycle {
                joints: find_cycle(&doc, &parent_joint, &link_names, start),
            });
        }

        let links = order
            .iter()
            .map(|&i| link_from_doc(&doc.links[i]))
            .collect::<Result<Vec<_>, _>>()?;
        let joints = doc
            .joints
            .iter()
            .map(joint_from_doc)
            .collect::<Result<Vec<_>, _>>()?;

        // actuated joint order = document order of non-fixed, non-mimic joints
        let mut dof_of_joint: Vec<Option<usize>> = vec![None; joints.len()];
        let mut actuated = Vec::new();
        for (ji, j) in joints.iter().enumerate() {
            if j.is_actuated() {
                dof_of_joint[ji] = Some(actuated.len());
                actuated.push(ji);
            }
        }
        for j in &joints {
            if let Some(m) = &j.mimic {
                if j.kind == JointKind::Fixed {
                    return Err(ModelError::InvalidMimic {
                        joint: j.name.clone(),
                        reason: "fixed joints cannot mimic".into(),
                    });
                }
                let Some(&src) = joint_names.get(m.source.as_str()) else {
                    return Err(ModelError::InvalidMimic {
                        joint: j.name.clone(),
                        reason: format!("unknown source joint `{}`", m.source),
                    });
                };
                if joints[src].mimic.is_some() {
                    return Err(ModelError::InvalidMimic {
                        joint: j.name.clone(),
                        reason: format!("source `{}` is itself a mimic joint", m.source),
                    });
                }
                if joints[src].kind == JointKind::Fixed {
                    return Err(ModelError::InvalidMimic {
                        joint: j.name.clone(),
                        reason: format!("source `{}` is a fixed joint", m.source),
                    });
                }
            }
        }

        let new_index: HashMap<&str, usize> = links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.as_str(), i))
            .collect();
        let mut link_joints: Vec<Option<LinkJoint>> = vec![None; links.len()];
        for (ji, j) in joints.iter().enumerate() {
            let child = new_index[j.child_link.as_str()];
            let (dof, multiplier, offset) = match (&j.mimic, j.kind) {
                (_, JointKind::Fixed) => (None, 1.0, 0.0),
                (Some(m), _) => (
                    dof_of_joint[joint_names[m.source.as_str()]],
                    m.multiplier,
                    m.offset,
                ),
                (None, _) => (dof_of_joint[ji], 1.0, 0.0),
            };
            link_joints[child] = Some(LinkJoint {
                joint: ji,
                parent: new_index[j.parent_link.as_str()],
                kind: j.kind,
                axis: j.axis,
                origin: j.origin.pose(),
                dof,
                multiplier,
                offset,
            });
        }

        let dof = actuated.len();
        let tool_indices = doc
            .tool_links
            .iter()
            .map(|t| {
                new_index
                    .get(t.as_str())
                    .copied()
                    .ok_or_else(|| ModelError::UnknownLink(t.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (name, q) in &doc.configurations {
            if q.len() != dof {
                return Err(invalid(
                    format!("configuration `{name}`"),
                    format!("has {} entries, robot has {dof} actuated joints", q.len()),
                ));
            }
            if q.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("configuration `{name}`"), "non-finite entry"));
            }
        }

        let mut sphere_link = Vec::new();
        for (li, l) in links.iter().enumerate() {
            sphere_link.extend(std::iter::repeat_n(li, l.spheres.len()));
        }
        let body_of_link = rigid_bodies(&link_joints);
        let cache = TopologyCache::build(&link_joints, dof, &sphere_link, &body_of_link);

        Ok(Self {
            links,
            joints,
            dof,
            cache,
            tool_links: doc.tool_links,
            named_configurations: doc.configurations,
            link_joints,
            actuated,
            tool_indices,
            sphere_link,
            body_of_link,
        })
    }

    /// Serializes the model back into the description schema.
    pub fn to_document(&self) -> RobotDocument {
        let links = self
            .links
            .iter()
            .map(|l| LinkDoc {
                name: l.name.clone(),
                mass: l.mass,
                com: l.com.into(),
                inertia: [
                    l.inertia[(0, 0)],
                    l.inertia[(1, 1)],
                    l.inertia[(2, 2)],
                    l.inertia[(0, 1)],
                    l.inertia[(0, 2)],
                    l.inertia[(1, 2)],
                ],
                spheres: l
                    .spheres
                    .iter()
                    .map(|s| SphereDoc {
                        center: s.center.into(),
                        radius: s.radius,
                    })
                    .collect(),
            })
            .collect();
        let joints = self
            .joints
            .iter()
            .map(|j| JointDoc {
                name: j.name.clone(),
                kind: j.kind,
                parent: j.parent_link.clone(),
                child: j.child_link.clone(),
                axis: if j.kind == JointKind::Fixed && j.axis == Vector3::zeros() {
                    None
                } else {
                    Some(j.axis.into())
                },
                origin: OriginDoc {
                    xyz: j.origin.xyz,
                    rpy: j.origin.rpy,
                },
                limits: LimitsDoc {
                    position: if j.limits.position == Interval::UNBOUNDED {
                        None
                    } else {
                        Some([j.limits.position.lo, j.limits.position.hi])
                    },
                    velocity: limit_value(j.limits.velocity),
                    acceleration: limit_value(j.limits.acceleration),
                    jerk: limit_value(j.limits.jerk),
                    torque: limit_value(j.limits.torque),
                },
                mimic: j.mimic.as_ref().map(|m| MimicDoc {
                    source: m.source.clone(),
                    multiplier: m.multiplier,
                    offset: m.offset,
                }),
            })
            .collect();
        RobotDocument {
            links,
            joints,
            tool_links: self.tool_links.clone(),
            configurations: self.named_configurations.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("robot document serializes")
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    /// Number of actuated joints.
    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn cache(&self) -> &TopologyCache {
        &self.cache
    }

    pub fn tool_links(&self) -> &[String] {
        &self.tool_links
    }

    pub fn tool_link_indices(&self) -> &[usize] {
        &self.tool_indices
    }

    pub fn named_configurations(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.named_configurations
    }

    pub fn named_configuration(&self, name: &str) -> Option<&[f64]> {
        self.named_configurations.get(name).map(Vec::as_slice)
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    /// Parent joint of a link, `None` for the root.
    pub fn link_joint(&self, link: usize) -> Option<&LinkJoint> {
        self.link_joints[link].as_ref()
    }

    pub fn parent_link(&self, link: usize) -> Option<usize> {
        self.link_joints[link].as_ref().map(|j| j.parent)
    }

    /// Joint index (into [`Self::joints`]) of each actuated degree of freedom.
    pub fn actuated_joints(&self) -> &[usize] {
        &self.actuated
    }

    pub fn dof_joint(&self, dof: usize) -> &JointSpec {
        &self.joints[self.actuated[dof]]
    }

    pub fn dof_names(&self) -> Vec<&str> {
        self.actuated
            .iter()
            .map(|&j| self.joints[j].name.as_str())
            .collect()
    }

    pub fn position_limits(&self) -> Vec<Interval> {
        self.actuated
            .iter()
            .map(|&j| self.joints[j].limits.position)
            .collect()
    }

    pub fn dof_limits(&self, dof: usize) -> &JointLimits {
        &self.joints[self.actuated[dof]].limits
    }

    /// Link owning each collision sphere (spheres are numbered link by link).
    pub fn sphere_links(&self) -> &[usize] {
        &self.sphere_link
    }

    pub fn sphere_count(&self) -> usize {
        self.sphere_link.len()
    }

    pub fn sphere_radii(&self) -> Vec<f64> {
        self.links
            .iter()
            .flat_map(|l| l.spheres.iter().map(|s| s.radius))
            .collect()
    }

    /// Rigid body id per link; links joined by fixed joints share an id.
    pub fn rigid_body_of_link(&self) -> &[usize] {
        &self.body_of_link
    }

    pub fn has_inertia(&self) -> bool {
        self.links.iter().any(|l| l.mass > 0.0)
    }

    pub(crate) fn with_self_collision_pairs(&self, pairs: Vec<(usize, usize)>) -> Self {
        let mut out = self.clone();
        out.cache.self_collision_pairs = pairs;
        out
    }

    /// Returns a copy whose `link` carries an additional rigid payload
    /// (`mass`, `com` in the link frame, `inertia` about the payload's own com).
    pub fn set_payload(
        &self,
        link: &str,
        mass: f64,
        com: Vector3<f64>,
        inertia: Matrix3<f64>,
    ) -> Result<Self, ModelError> {
        let li = self
            .link_index(link)
            .ok_or_else(|| ModelError::UnknownLink(link.to_string()))?;
        check_inertial(&format!("payload on `{link}`"), mass, &com, &inertia)?;
        let mut out = self.clone();
        let base = &mut out.links[li];
        let (m, c, i) = combine_inertia(base.mass, &base.com, &base.inertia, mass, &com, &inertia);
        base.mass = m;
        base.com = c;
        base.inertia = i;
        Ok(out)
    }
}

/// Rigid composition of two bodies given in the same frame.
pub fn combine_inertia(
    m1: f64,
    c1: &Vector3<f64>,
    i1: &Matrix3<f64>,
    m2: f64,
    c2: &Vector3<f64>,
    i2: &Matrix3<f64>,
) -> (f64, Vector3<f64>, Matrix3<f64>) {
    if m2 == 0.0 && *i2 == Matrix3::zeros() {
        return (m1, *c1, *i1);
    }
    let m = m1 + m2;
    let c = if m > 0.0 { (c1 * m1 + c2 * m2) / m } else { *c1 };
    let shift = |mass: f64, d: Vector3<f64>| mass * (Matrix3::identity() * d.norm_squared() - d * d.transpose());
    let i = i1 + shift(m1, c1 - c) + i2 + shift(m2, c2 - c);
    (m, c, 0.5 * (i + i.transpose()))
}

fn limit_value(iv: Interval) -> Option<LimitValue> {
    if iv == Interval::UNBOUNDED {
        None
    } else if iv.lo == -iv.hi {
        Some(LimitValue::Symmetric(iv.hi))
    } else {
        Some(LimitValue::Range([iv.lo, iv.hi]))
    }
}

fn interval_from(
    joint: &str,
    which: &'static str,
    v: Option<LimitValue>,
) -> Result<Interval, ModelError> {
    let iv = match v {
        None => return Ok(Interval::UNBOUNDED),
        Some(LimitValue::Symmetric(x)) => Interval::symmetric(x),
        Some(LimitValue::Range([lo, hi])) => Interval::new(lo, hi),
    };
    if iv.lo.is_nan() || iv.hi.is_nan() || iv.lo > iv.hi {
        return Err(ModelError::EmptyInterval {
            joint: joint.to_string(),
            which,
            lo: iv.lo,
            hi: iv.hi,
        });
    }
    Ok(iv)
}

fn joint_from_doc(j: &JointDoc) -> Result<JointSpec, ModelError> {
    let element = format!("joint `{}`", j.name);
    let axis = match (j.kind, j.axis) {
        (JointKind::Fixed, None) => Vector3::zeros(),
        (_, Some(a)) => Vector3::from(a),
        (_, None) => return Err(invalid(element, "movable joint needs an axis")),
    };
    if j.kind != JointKind::Fixed && (axis.norm() - 1.0).abs() > 1e-9 {
        return Err(invalid(element, format!("axis {axis:?} is not unit length")));
    }
    if j.origin.xyz.iter().chain(&j.origin.rpy).any(|v| !v.is_finite()) {
        return Err(invalid(element, "non-finite origin"));
    }
    let position = interval_from(&j.name, "position", j.limits.position.map(LimitValue::Range))?;
    let limits = JointLimits {
        position,
        velocity: interval_from(&j.name, "velocity", j.limits.velocity)?,
        acceleration: interval_from(&j.name, "acceleration", j.limits.acceleration)?,
        jerk: interval_from(&j.name, "jerk", j.limits.jerk)?,
        torque: interval_from(&j.name, "torque", j.limits.torque)?,
    };
    Ok(JointSpec {
        name: j.name.clone(),
        kind: j.kind,
        axis,
        parent_link: j.parent.clone(),
        child_link: j.child.clone(),
        origin: Origin {
            xyz: j.origin.xyz,
            rpy: j.origin.rpy,
        },
        limits,
        mimic: j.mimic.as_ref().map(|m| Mimic {
            source: m.source.clone(),
            multiplier: m.multiplier,
            offset: m.offset,
        }),
    })
}

fn check_inertial(
    element: &str,
    mass: f64,
    com: &Vector3<f64>,
    inertia: &Matrix3<f64>,
) -> Result<(), ModelError> {
    if !(mass >= 0.0) || !mass.is_finite() {
        return Err(invalid(element, format!("mass {mass} must be finite and non-negative")));
    }
    if com.iter().chain(inertia.iter()).any(|v| !v.is_finite()) {
        return Err(invalid(element, "non-finite inertial parameters"));
    }
    if (inertia - inertia.transpose()).amax() > 1e-12 {
        return Err(invalid(element, "inertia is not symmetric"));
    }
    let eig = SymmetricEigen::new(*inertia);
    if eig.eigenvalues.min() < -1e-9 {
        return Err(invalid(element, "inertia is not positive semidefinite"));
    }
    Ok(())
}

fn link_from_doc(l: &LinkDoc) -> Result<LinkSpec, ModelError> {
    let element = format!("link `{}`", l.name);
    let [ixx, iyy, izz, ixy, ixz, iyz] = l.inertia;
    let inertia = Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
    let com = Vector3::from(l.com);
    check_inertial(&element, l.mass, &com, &inertia)?;
    let spheres = l
        .spheres
        .iter()
        .map(|s| {
            if !(s.radius > 0.0) || !s.radius.is_finite() {
                return Err(invalid(&element, format!("sphere radius {} must be positive", s.radius)));
            }
            if s.center.iter().any(|v| !v.is_finite()) {
                return Err(invalid(&element, "non-finite sphere center"));
            }
            Ok(CollisionSphere {
                center: Vector3::from(s.center),
                radius: s.radius,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LinkSpec {
        name: l.name.clone(),
        mass: l.mass,
        com,
        inertia,
        spheres,
    })
}

fn find_cycle(
    doc: &RobotDocument,
    parent_joint: &[Option<usize>],
    link_names: &HashMap<&str, usize>,
    start: usize,
) -> Vec<String> {
    // walk parent pointers until a link repeats
    let mut visited = vec![usize::MAX; doc.links.len()];
    let mut path = Vec::new();
    let mut cur = start;
    loop {
        if visited[cur] != usize::MAX {
            return path[visited[cur]..]
                .iter()
                .map(|&j: &usize| doc.joints[j].name.clone())
                .collect();
        }
        let Some(j) = parent_joint[cur] else {
            return Vec::new();
        };
        visited[cur] = path.len();
        path.push(j);
        cur = link_names[doc.joints[j].parent.as_str()];
    }
}

fn rigid_bodies(link_joints: &[Option<LinkJoint>]) -> Vec<usize> {
    // links are topologically ordered, so a parent's body id is known first
    let mut body = vec![0usize; link_joints.len()];
    let mut next = 0;
    for (l, lj) in link_joints.iter().enumerate() {
        body[l] = match lj {
            Some(j) if j.kind == JointKind::Fixed => body[j.parent],
            _ => {
                next += 1;
                next - 1
            }
        };
    }
    body
}

#[cfg(test)]
mod tests;
