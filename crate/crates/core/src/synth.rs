//! Synthetic scenes and ray-cast depth images.

use nalgebra::{Matrix3, Vector3};

use crate::geometry::Shape;
use crate::pose::Pose;
use crate::tsdf::{CameraIntrinsics, DepthFrame};

/// Camera-to-world pose at `eye` looking at `target`; camera y points away
/// from `up`.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Pose {
    let z = (target - eye).normalize();
    let mut x = z.cross(&up);
    if x.norm() < 1e-9 {
        x = z.cross(&Vector3::x());
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Pose::new(Matrix3::from_columns(&[x, y, z]), eye)
}

pub fn intrinsics(width: usize, height: usize, fov_x: f64) -> CameraIntrinsics {
    let fx = 0.5 * width as f64 / (0.5 * fov_x).tan();
    CameraIntrinsics {
        width,
        height,
        fx,
        fy: fx,
        cx: 0.5 * (width as f64 - 1.0),
        cy: 0.5 * (height as f64 - 1.0),
    }
}

/// Ray-cast depth image of `shapes` (0 where nothing is hit).
pub fn render_depth(cam: &CameraIntrinsics, pose: &Pose, shapes: &[Shape]) -> DepthFrame {
    let mut depth = vec![0.0f32; cam.width * cam.height];
    for v in 0..cam.height {
        for u in 0..cam.width {
            let dir = pose.rotation * cam.ray(u, v);
            // unit optical-axis component, so the hit parameter is the depth
            let hit = shapes
                .iter()
                .filter_map(|s| s.ray_hit(&pose.translation, &dir))
                .fold(f64::INFINITY, f64::min);
            if hit.is_finite() {
                depth[v * cam.width + u] = hit as f32;
            }
        }
    }
    DepthFrame {
        intrinsics: cam.clone(),
        pose: *pose,
        depth,
    }
}

/// Closed box room: floor, ceiling and four walls of thickness `wall`
/// around the interior `[0, size]`, plus a block standing on the floor and a
/// ball hanging above it, both well clear of the walls.
pub fn cuboid_room(size: [f64; 3], wall: f64) -> Vec<Shape> {
    let [sx, sy, sz] = size;
    let h = 0.5 * wall;
    let mut shapes = vec![
        Shape::cuboid([0.5 * sx, 0.5 * sy, -h], [0.5 * sx + wall, 0.5 * sy + wall, h]),
        Shape::cuboid([0.5 * sx, 0.5 * sy, sz + h], [0.5 * sx + wall, 0.5 * sy + wall, h]),
        Shape::cuboid([-h, 0.5 * sy, 0.5 * sz], [h, 0.5 * sy + wall, 0.5 * sz]),
        Shape::cuboid([sx + h, 0.5 * sy, 0.5 * sz], [h, 0.5 * sy + wall, 0.5 * sz]),
        Shape::cuboid([0.5 * sx, -h, 0.5 * sz], [0.5 * sx, h, 0.5 * sz]),
        Shape::cuboid([0.5 * sx, sy + h, 0.5 * sz], [0.5 * sx, h, 0.5 * sz]),
    ];
    shapes.push(Shape::Cuboid {
        pose: Pose::from_xyz_rpy([0.45 * sx, 0.5 * sy, 0.15 * sz], [0.0, 0.0, 0.4]),
        half_extents: Vector3::new(0.1 * sx, 0.07 * sy, 0.15 * sz),
    });
    shapes.push(Shape::sphere([0.6 * sx, 0.45 * sy, 0.6 * sz], 0.08 * sx.min(sy)));
    shapes
}

/// Viewpoints covering the room: a ring near the walls at alternating
/// heights looking across the room toward floor and ceiling level, plus outward views from the center and views
/// straight at the floor and ceiling.
pub fn room_views(size: [f64; 3], n: usize) -> Vec<Pose> {
    let s = Vector3::from(size);
    let c = s * 0.5;
    let mut out = Vec::new();
    for i in 0..n {
        let a = std::f64::consts::TAU * (i as f64 + 0.5) / n as f64;
        let radial = Vector3::new(a.cos(), a.sin(), 0.0);
        let h = if i % 2 == 0 { 0.3 } else { 0.7 };
        let eye = Vector3::new(c.x + 0.38 * s.x * radial.x, c.y + 0.38 * s.y * radial.y, h * s.z);
        for level in [0.1, 0.9] {
            let target = Vector3::new(c.x - 0.2 * s.x * radial.x, c.y - 0.2 * s.y * radial.y, level * s.z);
            out.push(look_at(eye, target, Vector3::z()));
        }
        let target = c + Vector3::new(0.45 * s.x * radial.x, 0.45 * s.y * radial.y, if i % 2 == 0 { 0.2 } else { -0.2 } * s.z);
        out.push(look_at(c, target, Vector3::z()));
    }
    out.push(look_at(c, Vector3::new(c.x + 0.01, c.y, 0.0), Vector3::z()));
    out.push(look_at(c, Vector3::new(c.x + 0.01, c.y, s.z), Vector3::z()));
    out
}
