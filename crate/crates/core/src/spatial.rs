//! Spatial vector algebra in `[angular; linear]` ordering, with transforms and
//! inertias kept in factored form instead of 6×6 matrices.

use nalgebra::{Matrix3, Vector3, Vector6};

pub type SpatialVector = Vector6<f64>;

#[inline]
pub fn spatial(angular: Vector3<f64>, linear: Vector3<f64>) -> SpatialVector {
    Vector6::new(angular.x, angular.y, angular.z, linear.x, linear.y, linear.z)
}

#[inline]
pub fn ang(v: &SpatialVector) -> Vector3<f64> {
    v.fixed_rows::<3>(0).into_owned()
}

#[inline]
pub fn lin(v: &SpatialVector) -> Vector3<f64> {
    v.fixed_rows::<3>(3).into_owned()
}

/// Plücker transform from a parent frame to a child frame whose orientation
/// in the parent is `rotation` and whose origin is at `translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Transform {
    /// `X·[ω; v] = [Rᵀω; Rᵀ(v + ω×p)]`.
    #[inline]
    pub fn apply(&self, m: &SpatialVector) -> SpatialVector {
        let (w, v) = (ang(m), lin(m));
        let rt = self.rotation.transpose();
        spatial(rt * w, rt * (v + w.cross(&self.translation)))
    }

    /// `Xᵀ·[n; f] = [R n + p×(R f); R f]`.
    #[inline]
    pub fn apply_transpose(&self, f: &SpatialVector) -> SpatialVector {
        let rn = self.rotation * ang(f);
        let rf = self.rotation * lin(f);
        spatial(rn + self.translation.cross(&rf), rf)
    }
}

/// Motion cross product `crm(v)·m`.
#[inline]
pub fn crm(v: &SpatialVector, m: &SpatialVector) -> SpatialVector {
    let (w, u) = (ang(v), lin(v));
    let (a, b) = (ang(m), lin(m));
    spatial(w.cross(&a), w.cross(&b) + u.cross(&a))
}

/// Force cross product `crf(v)·f = −crm(v)ᵀ f`.
#[inline]
pub fn crf(v: &SpatialVector, f: &SpatialVector) -> SpatialVector {
    let (w, u) = (ang(v), lin(v));
    let (n, g) = (ang(f), lin(f));
    spatial(w.cross(&n) + u.cross(&g), w.cross(&g))
}

/// Rigid-body inertia about the body frame origin, stored as mass, center of
/// mass and rotational inertia about the center of mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inertia {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub rotational: Matrix3<f64>,
}

impl Inertia {
    /// `I·[ω; v]`: `h = m(v + ω×c)`, `n = I_c ω + c×h`.
    #[inline]
    pub fn mul(&self, v: &SpatialVector) -> SpatialVector {
        let (w, u) = (ang(v), lin(v));
        let h = self.mass * (u + w.cross(&self.com));
        spatial(self.rotational * w + self.com.cross(&h), h)
    }

    /// Dense 6×6 form, for tests and diagnostics.
    pub fn matrix(&self) -> nalgebra::Matrix6<f64> {
        let mut out = nalgebra::Matrix6::zeros();
        for i in 0..6 {
            let mut e = Vector6::zeros();
            e[i] = 1.0;
            out.set_column(i, &self.mul(&e));
        }
        out
    }
}
