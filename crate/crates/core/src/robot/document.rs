//! Serde mirror of the robot description JSON.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::JointKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotDocument {
    pub links: Vec<LinkDoc>,
    pub joints: Vec<JointDoc>,
    #[serde(default)]
    pub tool_links: Vec<String>,
    #[serde(default)]
    pub configurations: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub name: String,
    #[serde(default)]
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
    /// `[ixx, iyy, izz, ixy, ixz, iyz]` about the center of mass.
    #[serde(default)]
    pub inertia: [f64; 6],
    #[serde(default)]
    pub spheres: Vec<SphereDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereDoc {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDoc {
    pub name: String,
    pub kind: JointKind,
    pub parent: String,
    pub child: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
    #[serde(default)]
    pub origin: OriginDoc,
    #[serde(default)]
    pub limits: LimitsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mimic: Option<MimicDoc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginDoc {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<LimitValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceleration: Option<LimitValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jerk: Option<LimitValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torque: Option<LimitValue>,
}

/// A scalar `v` means `[-v, v]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LimitValue {
    Symmetric(f64),
    Range([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MimicDoc {
    pub source: String,
    #[serde(default = "unit_multiplier")]
    pub multiplier: f64,
    #[serde(default)]
    pub offset: f64,
}

fn unit_multiplier() -> f64 {
    1.0
}
