//! Analytic primitives: signed distance, ray casting and bounds.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::pose::Pose;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Cuboid { pose: Pose, half_extents: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
}

/// Serialized form used by scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ShapeDoc {
    Cuboid {
        #[serde(default)]
        xyz: [f64; 3],
        #[serde(default)]
        rpy: [f64; 3],
        half_extents: [f64; 3],
    },
    Sphere { center: [f64; 3], radius: f64 },
}

impl From<&ShapeDoc> for Shape {
    fn from(d: &ShapeDoc) -> Self {
        match d {
            ShapeDoc::Cuboid { xyz, rpy, half_extents } => Shape::Cuboid {
                pose: Pose::from_xyz_rpy(*xyz, *rpy),
                half_extents: Vector3::from(*half_extents),
            },
            ShapeDoc::Sphere { center, radius } => Shape::Sphere {
                center: Vector3::from(*center),
                radius: *radius,
            },
        }
    }
}

impl Shape {
    pub fn cuboid(center: [f64; 3], half_extents: [f64; 3]) -> Self {
        Shape::Cuboid {
            pose: Pose::from_translation(Vector3::from(center)),
            half_extents: Vector3::from(half_extents),
        }
    }

    pub fn sphere(center: [f64; 3], radius: f64) -> Self {
        Shape::Sphere {
            center: Vector3::from(center),
            radius,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Shape::Cuboid { pose, half_extents } => {
                pose.rotation.iter().chain(pose.translation.iter()).all(|v| v.is_finite())
                    && half_extents.iter().all(|h| h.is_finite() && *h >= 0.0)
            }
            Shape::Sphere { center, radius } => center.iter().all(|v| v.is_finite()) && radius.is_finite() && *radius >= 0.0,
        }
    }

    /// Signed distance, negative inside.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Cuboid { pose, half_extents } => {
                let local = pose.inverse_transform_point(p);
                let q = local.abs() - half_extents;
                let outside = q.map(|v| v.max(0.0)).norm();
                let inside = q.max().min(0.0);
                outside + inside
            }
        }
    }

    /// Axis-aligned world bounds `(lo, hi)`.
    pub fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            Shape::Sphere { center, radius } => (center.add_scalar(-radius), center.add_scalar(*radius)),
            Shape::Cuboid { pose, half_extents } => {
                let ext = pose.rotation.abs() * half_extents;
                (pose.translation - ext, pose.translation + ext)
            }
        }
    }

    /// Smallest `t > 0` with `origin + t·dir` on the surface, for rays
    /// starting outside the shape.
    pub fn ray_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(-b - s) / a, (-b + s) / a].into_iter().find(|t| *t > 0.0)
            }
            Shape::Cuboid { pose, half_extents } => {
                let o = pose.inverse_transform_point(origin);
                let d = pose.rotation.transpose() * dir;
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..3 {
                    if d[i].abs() < 1e-300 {
                        if o[i].abs() > half_extents[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half_extents[i] - o[i]) / d[i];
                    let b = (half_extents[i] - o[i]) / d[i];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 {
                    return None;
                }
                [t0, t1].into_iter().find(|t| *t > 0.0)
            }
        }
    }
}

/// Minimum signed distance over a set of shapes (`+∞` when empty).
pub fn scene_sdf(shapes: &[Shape], p: &Vector3<f64>) -> f64 {
    shapes.iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // point-to-box distance by dense surface sampling of the six faces
    fn brute_box_distance(h: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
        let n = 120;
        let mut best = f64::INFINITY;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                for i in 0..=n {
                    for j in 0..=n {
                        let mut q = Vector3::zeros();
                        q[axis] = sign * h[axis];
                        q[u] = -h[u] + 2.0 * h[u] * i as f64 / n as f64;
                        q[v] = -h[v] + 2.0 * h[v] * j as f64 / n as f64;
                        best = best.min((p - q).norm());
                    }
                }
            }
        }
        best
    }

    #[test]
    fn sphere_sdf() {
        let s = Shape::sphere([0.0; 3], 0.1);
        assert!((s.sdf(&Vector3::new(0.15, 0.0, 0.0)) - 0.05).abs() < 1e-15);
        assert!((s.sdf(&Vector3::new(0.0, 0.05, 0.0)) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn box_corner_and_brute_force() {
        let b = Shape::cuboid([0.0; 3], [0.5; 3]);
        let p = Vector3::new(0.8, -0.9, 0.7);
        let corner = Vector3::new(0.5, -0.5, 0.5);
        assert!((b.sdf(&p) - (p - corner).norm()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Vector3::new(0.3, 0.2, 0.5);
        let shape = Shape::Cuboid {
            pose: Pose::identity(),
            half_extents: h,
        };
        for _ in 0..20 {
            let p = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let d = shape.sdf(&p);
            if d > 0.0 {
                assert!((d - brute_box_distance(&h, &p)).abs() < 5e-3);
            } else {
                let depth = (h - p.abs()).min();
                assert!((d + depth).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotated_box_and_ray_hits() {
        let b = Shape::Cuboid {
            pose: Pose::from_xyz_rpy([1.0, 0.0, 0.0], [0.0, 0.0, 0.7]),
            half_extents: Vector3::new(0.2, 0.1, 0.3),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let origin = Vector3::new(-1.0, 0.1, 0.05);
        for _ in 0..200 {
            let target = Vector3::new(1.0 + rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.4..0.4));
            let dir = (target - origin).normalize();
            if let Some(t) = b.ray_hit(&origin, &dir) {
                assert!(b.sdf(&(origin + dir * t)).abs() < 1e-12);
                // nothing closer along the ray is inside
                for k in 1..50 {
                    assert!(b.sdf(&(origin + dir * (t * k as f64 / 50.0 - 1e-9))) > -1e-9);
                }
            }
        }
        let (lo, hi) = b.aabb();
        for _ in 0..500 {
            let p = Vector3::new(rng.gen_range(0.5..1.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            if b.sdf(&p) < 0.0 {
                assert!((0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i]));
            }
        }
    }

    #[test]
    fn sphere_ray() {
        let s = Shape::sphere([0.0, 0.0, 2.0], 0.5);
        let t = s.ray_hit(&Vector3::zeros(), &Vector3::z()).unwrap();
        assert!((t - 1.5).abs() < 1e-12);
        assert!(s.ray_hit(&Vector3::zeros(), &Vector3::x()).is_none());
    }
}
