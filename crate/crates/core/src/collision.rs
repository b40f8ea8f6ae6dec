//! Sphere-based collision costs: robot self collision by a chunked max
//! reduction over sphere pairs, and scene collision against the ESDF with
//! swept-sphere stepping and arc-length weighting.

use nalgebra::{Matrix3, Matrix3x6, RowVector6, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::esdf::DenseEsdf;
use crate::robot::RobotModel;

/// Default activation margin ε (m) of the smooth hinge.
pub const DEFAULT_ACTIVATION: f64 = 0.025;
/// Default number of pairs reduced per chunk in the first stage.
pub const DEFAULT_CHUNK: usize = 1024;
/// Default reference length ℓ (m) of the arc-length weighting.
pub const DEFAULT_REFERENCE_LENGTH: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum CollisionError {
    #[error("expected {expected} sphere centers, got {got}")]
    SphereCount { expected: usize, got: usize },
    #[error("timestep {timestep} has {got} spheres, expected {expected}")]
    TimestepSpheres {
        timestep: usize,
        expected: usize,
        got: usize,
    },
    #[error("ESDF has no sign information")]
    UnsignedEsdf,
    #[error("invalid collision config: {0}")]
    InvalidConfig(String),
}

/// Smooth hinge of the clearance `s` with activation margin `eps`: zero for
/// `s ≥ ε`, quadratic on `[0, ε)`, linear with slope −1 below zero.
/// Returns `(cost, dcost/ds)`.
pub fn hinge(s: f64, eps: f64) -> (f64, f64) {
    if s >= eps {
        (0.0, 0.0)
    } else if s >= 0.0 {
        let e = eps - s;
        (e * e / (2.0 * eps), -e / eps)
    } else {
        (0.5 * eps - s, -1.0)
    }
}

/// Index of the spheres responsible for a report's worst value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Culprit {
    Pair(usize, usize),
    Sphere(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionReport {
    /// Largest penetration depth in meters; `≤ 0` means free, `-∞` when
    /// nothing was checked.
    pub max_penetration: f64,
    pub worst: Option<Culprit>,
    pub cost: f64,
    /// Gradient of `cost` with respect to each sphere center.
    pub gradient: Vec<Vector3<f64>>,
}

impl CollisionReport {
    fn empty(n: usize) -> Self {
        Self {
            max_penetration: f64::NEG_INFINITY,
            worst: None,
            cost: 0.0,
            gradient: vec![Vector3::zeros(); n],
        }
    }

    /// No penetration within `tolerance` meters.
    pub fn is_free(&self, tolerance: f64) -> bool {
        self.max_penetration <= tolerance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Hinge of the most penetrating pair only.
    #[default]
    Max,
    /// Hinge summed over all pairs.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfCollisionConfig {
    pub activation: f64,
    pub chunk_size: usize,
    pub reduction: Reduction,
}

impl Default for SelfCollisionConfig {
    fn default() -> Self {
        Self {
            activation: DEFAULT_ACTIVATION,
            chunk_size: DEFAULT_CHUNK,
            reduction: Reduction::Max,
        }
    }
}

fn penetration(c: &[Vector3<f64>], r: &[f64], (i, j): (usize, usize)) -> f64 {
    r[i] + r[j] - (c[i] - c[j]).norm()
}

/// Most penetrating pair by a two-stage reduction: each chunk of at most
/// `chunk` pairs reduces to its maximum, then the chunk maxima reduce.
/// Ties resolve to the lowest pair index in both stages, so the result equals
/// a single sequential scan. Returns `(value, pair index)`.
pub fn max_penetration_chunked(
    centers: &[Vector3<f64>],
    radii: &[f64],
    pairs: &[(usize, usize)],
    chunk: usize,
) -> Option<(f64, usize)> {
    let chunk = chunk.max(1);
    let maxima: Vec<(f64, usize)> = pairs
        .par_chunks(chunk)
        .enumerate()
        .map(|(k, block)| {
            let mut best = (f64::NEG_INFINITY, k * chunk);
            for (o, &p) in block.iter().enumerate() {
                let v = penetration(centers, radii, p);
                if v > best.0 {
                    best = (v, k * chunk + o);
                }
            }
            best
        })
        .collect();
    let mut out: Option<(f64, usize)> = None;
    for m in maxima {
        if out.is_none_or(|o| m.0 > o.0) {
            out = Some(m);
        }
    }
    out
}

fn pair_gradient(c: &[Vector3<f64>], (i, j): (usize, usize), dcost_ds: f64, grad: &mut [Vector3<f64>]) {
    let diff = c[i] - c[j];
    let n = diff.norm();
    if n > 0.0 {
        let u = diff / n;
        grad[i] += dcost_ds * u;
        grad[j] -= dcost_ds * u;
    }
}

/// Self-collision cost over the model's checked sphere pairs at one
/// configuration. The clearance of a pair is `|c_i − c_j| − r_i − r_j`.
pub fn self_collision(
    model: &RobotModel,
    centers: &[Vector3<f64>],
    config: &SelfCollisionConfig,
) -> Result<CollisionReport, CollisionError> {
    let radii = model.sphere_radii();
    if centers.len() != radii.len() {
        return Err(CollisionError::SphereCount {
            expected: radii.len(),
            got: centers.len(),
        });
    }
    if config.chunk_size == 0 || !(config.activation > 0.0) {
        return Err(CollisionError::InvalidConfig("chunk_size and activation must be positive".into()));
    }
    let pairs = &model.cache().self_collision_pairs;
    let mut report = CollisionReport::empty(centers.len());
    let Some((value, idx)) = max_penetration_chunked(centers, &radii, pairs, config.chunk_size) else {
        return Ok(report);
    };
    report.max_penetration = value;
    report.worst = Some(Culprit::Pair(pairs[idx].0, pairs[idx].1));
    match config.reduction {
        Reduction::Max => {
            let (cost, dc) = hinge(-value, config.activation);
            report.cost = cost;
            if dc != 0.0 {
                pair_gradient(centers, pairs[idx], dc, &mut report.gradient);
            }
        }
        Reduction::Sum => {
            for &p in pairs {
                let (cost, dc) = hinge(-penetration(centers, &radii, p), config.activation);
                report.cost += cost;
                if dc != 0.0 {
                    pair_gradient(centers, p, dc, &mut report.gradient);
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub activation: f64,
    /// ℓ in the per-segment weight `(L + ℓ)/ℓ`, so a resting sphere has unit
    /// weight and a moving one is weighted by its travel.
    pub reference_length: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            activation: DEFAULT_ACTIVATION,
            reference_length: DEFAULT_REFERENCE_LENGTH,
        }
    }
}

impl SceneConfig {
    fn validate(&self) -> Result<(), CollisionError> {
        if !(self.activation > 0.0) || !(self.reference_length > 0.0) {
            return Err(CollisionError::InvalidConfig(
                "activation and reference_length must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A check on a segment `a → b`: position `a + lambda·(b − a)` covering the
/// fraction `share` of the segment length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentCheck {
    pub lambda: f64,
    pub share: f64,
}

/// Check placement along `a → b`: start at `a` and advance by
/// `max(distance − radius, v_esdf)` until the segment is covered. The end
/// point itself is left to the next segment.
pub fn place_checks(esdf: &DenseEsdf, a: &Vector3<f64>, b: &Vector3<f64>, radius: f64) -> Vec<SegmentCheck> {
    let len = (b - a).norm();
    if len == 0.0 {
        return vec![SegmentCheck { lambda: 0.0, share: 1.0 }];
    }
    let dir = (b - a) / len;
    let v = esdf.config.voxel_size;
    let mut out = Vec::new();
    let mut s = 0.0;
    while s < len {
        let d = esdf.query(&(a + dir * s)).distance;
        let next = (s + (d - radius).max(v)).min(len);
        out.push(SegmentCheck {
            lambda: s / len,
            share: (next - s) / len,
        });
        s = next;
    }
    out
}

/// Cost of one sphere along `a → b` with gradients with respect to both end
/// points.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentCost {
    pub cost: f64,
    pub max_penetration: f64,
    pub grad_a: Vector3<f64>,
    pub grad_b: Vector3<f64>,
}

/// Left-point quadrature of the hinge over the checks of [`place_checks`],
/// weighted by `(L + ℓ)/ℓ`. The check positions and shares depend on the
/// queried distances, so the gradient is carried through the placement
/// recursion in forward mode; it is exact wherever the cost is smooth.
pub fn segment_cost(
    esdf: &DenseEsdf,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    radius: f64,
    config: &SceneConfig,
) -> SegmentCost {
    let mut out = SegmentCost {
        cost: 0.0,
        max_penetration: f64::NEG_INFINITY,
        grad_a: Vector3::zeros(),
        grad_b: Vector3::zeros(),
    };
    let diff = b - a;
    let len = diff.norm();
    if len == 0.0 {
        let q = esdf.query(a);
        out.max_penetration = radius - q.distance;
        let (h, dh) = hinge(q.distance - radius, config.activation);
        out.cost = h;
        out.grad_a = dh * q.gradient;
        return out;
    }
    let u = diff / len;
    let v = esdf.config.voxel_size;
    // derivatives are rows over θ = (a, b)
    let mut dlen = RowVector6::zeros();
    dlen.fixed_columns_mut::<3>(0).copy_from(&(-u.transpose()));
    dlen.fixed_columns_mut::<3>(3).copy_from(&u.transpose());
    let proj = (Matrix3::identity() - u * u.transpose()) / len;
    let mut ddir = Matrix3x6::zeros();
    ddir.fixed_columns_mut::<3>(0).copy_from(&(-proj));
    ddir.fixed_columns_mut::<3>(3).copy_from(&proj);
    let mut da = Matrix3x6::zeros();
    da.fixed_columns_mut::<3>(0).copy_from(&Matrix3::identity());
    // Σ Δs·h and its derivative
    let mut sum = 0.0;
    let mut dsum = RowVector6::zeros();
    let mut s = 0.0;
    let mut ds = RowVector6::zeros();
    while s < len {
        let x = a + u * s;
        let q = esdf.query(&x);
        out.max_penetration = out.max_penetration.max(radius - q.distance);
        let dx = da + u * ds + ddir * s;
        let dd = q.gradient.transpose() * dx;
        let (next, dnext) = if s + (q.distance - radius).max(v) >= len {
            (len, dlen)
        } else if q.distance - radius > v {
            (s + q.distance - radius, ds + dd)
        } else {
            (s + v, ds)
        };
        let (h, dh) = hinge(q.distance - radius, config.activation);
        if h > 0.0 {
            sum += (next - s) * h;
            dsum += (dnext - ds) * h + dd * ((next - s) * dh);
        }
        s = next;
        ds = dnext;
    }
    // (L + ℓ)/(ℓ L) = 1/ℓ + 1/L
    let k = 1.0 / config.reference_length + 1.0 / len;
    out.cost = k * sum;
    let grad = dsum * k - dlen * (sum / (len * len));
    out.grad_a = grad.fixed_columns::<3>(0).transpose();
    out.grad_b = grad.fixed_columns::<3>(3).transpose();
    out
}

fn check_esdf(esdf: &DenseEsdf) -> Result<(), CollisionError> {
    if esdf.has_seeds() && !esdf.signed {
        return Err(CollisionError::UnsignedEsdf);
    }
    Ok(())
}

/// Scene cost of spheres at rest: the hinge of each sphere's clearance,
/// summed over spheres.
pub fn scene_static(
    esdf: &DenseEsdf,
    centers: &[Vector3<f64>],
    radii: &[f64],
    config: &SceneConfig,
) -> Result<CollisionReport, CollisionError> {
    check_esdf(esdf)?;
    config.validate()?;
    if centers.len() != radii.len() {
        return Err(CollisionError::SphereCount {
            expected: radii.len(),
            got: centers.len(),
        });
    }
    let mut report = CollisionReport::empty(centers.len());
    for (k, (c, r)) in centers.iter().zip(radii).enumerate() {
        let q = esdf.query(c);
        let pen = r - q.distance;
        if pen > report.max_penetration {
            report.max_penetration = pen;
            report.worst = Some(Culprit::Sphere(k));
        }
        let (h, dh) = hinge(q.distance - r, config.activation);
        if h > 0.0 {
            report.cost += h;
            report.gradient[k] = dh * q.gradient;
        }
    }
    Ok(report)
}

/// Swept scene cost along a trajectory of sphere centers (`[timestep][sphere]`).
///
/// Report `t` holds the cost and worst penetration of the checks on the
/// segments leaving timestep `t` (the last timestep is checked at rest), and
/// the full gradient with respect to the sphere centers at timestep `t`.
pub fn scene_swept(
    esdf: &DenseEsdf,
    trajectory: &[Vec<Vector3<f64>>],
    radii: &[f64],
    config: &SceneConfig,
) -> Result<Vec<CollisionReport>, CollisionError> {
    check_esdf(esdf)?;
    config.validate()?;
    for (t, c) in trajectory.iter().enumerate() {
        if c.len() != radii.len() {
            return Err(CollisionError::TimestepSpheres {
                timestep: t,
                expected: radii.len(),
                got: c.len(),
            });
        }
    }
    let n = trajectory.len();
    let segments: Vec<(CollisionReport, Vec<Vector3<f64>>)> = (0..n)
        .into_par_iter()
        .map(|t| {
            let next = trajectory.get(t + 1).unwrap_or(&trajectory[t]);
            let mut here = CollisionReport::empty(radii.len());
            let mut ahead = vec![Vector3::zeros(); radii.len()];
            for (k, r) in radii.iter().enumerate() {
                let (a, b) = (&trajectory[t][k], &next[k]);
                let s = segment_cost(esdf, a, b, *r, config);
                if s.max_penetration > here.max_penetration {
                    here.max_penetration = s.max_penetration;
                    here.worst = Some(Culprit::Sphere(k));
                }
                here.cost += s.cost;
                here.gradient[k] = s.grad_a;
                ahead[k] = s.grad_b;
            }
            (here, ahead)
        })
        .collect();
    let mut reports = Vec::with_capacity(n);
    let mut carry: Option<Vec<Vector3<f64>>> = None;
    for (t, (mut rep, ahead)) in segments.into_iter().enumerate() {
        if let Some(c) = carry.take() {
            for (g, a) in rep.gradient.iter_mut().zip(c) {
                *g += a;
            }
        }
        if t + 1 == n {
            // the resting check's end point is the same center
            for (g, a) in rep.gradient.iter_mut().zip(ahead) {
                *g += a;
            }
        } else {
            carry = Some(ahead);
        }
        reports.push(rep);
    }
    Ok(reports)
}
