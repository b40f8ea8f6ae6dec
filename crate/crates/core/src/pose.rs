//! Rigid transforms in factored (rotation, translation) form and the SO(3)
//! helpers the solvers need.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// A rigid transform `x ↦ R x + p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Builds a pose from a translation and extrinsic X-Y-Z Euler angles
    /// (roll about world x, then pitch about world y, then yaw about world z).
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        Self {
            rotation: rpy_to_matrix(rpy),
            translation: Vector3::from(xyz),
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Translation and roll-pitch-yaw angles with `R = Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn to_xyz_rpy(&self) -> ([f64; 3], [f64; 3]) {
        let (r, p, y) = nalgebra::Rotation3::from_matrix_unchecked(self.rotation).euler_angles();
        (self.translation.into(), [r, p, y])
    }

    /// Largest entry of `|RᵀR − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }
}

pub fn rpy_to_matrix(rpy: [f64; 3]) -> Matrix3<f64> {
    let [r, p, y] = rpy;
    let rx = axis_angle_matrix(&Vector3::x(), r);
    let ry = axis_angle_matrix(&Vector3::y(), p);
    let rz = axis_angle_matrix(&Vector3::z(), y);
    rz * ry * rx
}

/// Rodrigues rotation about a unit `axis`.
pub fn axis_angle_matrix(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    let k = skew(axis);
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map: rotation vector to matrix.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let angle = phi.norm();
    if angle < 1e-12 {
        return Matrix3::identity() + skew(phi);
    }
    axis_angle_matrix(&(phi / angle), angle)
}

/// Logarithm map: rotation matrix to rotation vector (axis · angle, angle ∈ [0, π]).
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    // quaternion route stays well conditioned near π
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    q.scaled_axis()
}

/// Inverse of the right Jacobian of SO(3): `log(R exp(ε)) ≈ log(R) + J_r⁻¹(log R) ε`.
pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let coeff = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coeff * k * k
}
