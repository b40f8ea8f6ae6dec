//! Recursive Newton-Euler inverse dynamics and its adjoint.
//!
//! The base is fixed at the world origin. External wrenches are world-aligned
//! and act at each link frame origin.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::robot::{JointKind, RobotModel};
use crate::spatial::{ang, crf, crm, lin, spatial, Inertia, SpatialVector, Transform};

pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("cache does not match the inputs it is used with")]
    StaleCache,
}

/// Per-link values from the forward pass, consumed by [`rnea_vjp`].
#[derive(Debug, Clone, PartialEq)]
pub struct RneaCache {
    pub v: Vec<SpatialVector>,
    pub a: Vec<SpatialVector>,
    /// Net force transmitted through each link's parent joint.
    pub f: Vec<SpatialVector>,
    q: Vec<f64>,
    qd: Vec<f64>,
    f_ext: Vec<SpatialVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RneaGradients {
    pub q_bar: Vec<f64>,
    pub qd_bar: Vec<f64>,
    pub qdd_bar: Vec<f64>,
    /// World-aligned, per link.
    pub fext_bar: Vec<SpatialVector>,
}

pub fn link_inertia(model: &RobotModel, link: usize) -> Inertia {
    let l = &model.links()[link];
    Inertia {
        mass: l.mass,
        com: l.com,
        rotational: l.inertia,
    }
}

/// Motion subspace of a link's parent joint in the link frame.
pub fn motion_subspace(kind: JointKind, axis: &Vector3<f64>) -> SpatialVector {
    match kind {
        JointKind::Revolute => spatial(*axis, Vector3::zeros()),
        JointKind::Prismatic => spatial(Vector3::zeros(), *axis),
        JointKind::Fixed => SpatialVector::zeros(),
    }
}

struct LinkFrame {
    x: Transform,
    s: SpatialVector,
    /// Joint rate multiplier (mimic) and actuated index.
    dof: Option<usize>,
    mult: f64,
    parent: usize,
    world_rot: Matrix3<f64>,
}

fn frames(model: &RobotModel, q: &[f64]) -> Vec<Option<LinkFrame>> {
    let n = model.links().len();
    let mut out: Vec<Option<LinkFrame>> = Vec::with_capacity(n);
    let mut world_rot = vec![Matrix3::identity(); n];
    out.push(None);
    for l in 1..n {
        let j = model.link_joint(l).expect("non-root link");
        let local = j.local_pose(j.value(q));
        world_rot[l] = world_rot[j.parent] * local.rotation;
        out.push(Some(LinkFrame {
            x: Transform {
                rotation: local.rotation,
                translation: local.translation,
            },
            s: motion_subspace(j.kind, &j.axis),
            dof: j.dof,
            mult: j.multiplier,
            parent: j.parent,
            world_rot: world_rot[l],
        }));
    }
    out
}

fn check(what: &'static str, v: &[f64], n: usize) -> Result<(), DynamicsError> {
    if v.len() != n {
        return Err(DynamicsError::DimensionMismatch {
            what,
            expected: n,
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DynamicsError::NonFinite(what));
    }
    Ok(())
}

/// Joint torques for `(q, q̇, q̈)` under `gravity` and optional per-link
/// world-aligned external wrenches.
pub fn rnea(
    model: &RobotModel,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
    f_ext: Option<&[SpatialVector]>,
    gravity: &Vector3<f64>,
) -> Result<(Vec<f64>, RneaCache), DynamicsError> {
    let d = model.dof();
    let n = model.links().len();
    check("q", q, d)?;
    check("qd", qd, d)?;
    check("qdd", qdd, d)?;
    if gravity.iter().any(|x| !x.is_finite()) {
        return Err(DynamicsError::NonFinite("gravity"));
    }
    let f_ext: Vec<SpatialVector> = match f_ext {
        Some(f) => {
            if f.len() != n {
                return Err(DynamicsError::DimensionMismatch {
                    what: "f_ext",
                    expected: n,
                    got: f.len(),
                });
            }
            if f.iter().any(|w| w.iter().any(|x| !x.is_finite())) {
                return Err(DynamicsError::NonFinite("f_ext"));
            }
            f.to_vec()
        }
        None => vec![SpatialVector::zeros(); n],
    };

    let fr = frames(model, q);
    let mut v = vec![SpatialVector::zeros(); n];
    let mut a = vec![SpatialVector::zeros(); n];
    let mut f = vec![SpatialVector::zeros(); n];
    // gravity enters as a fictitious base acceleration
    a[0] = spatial(Vector3::zeros(), -gravity);
    f[0] = -f_ext[0];
    for l in 1..n {
        let k = fr[l].as_ref().unwrap();
        let (rate, acc) = match k.dof {
            Some(j) => (k.mult * qd[j], k.mult * qdd[j]),
            None => (0.0, 0.0),
        };
        let vj = k.s * rate;
        v[l] = k.x.apply(&v[k.parent]) + vj;
        a[l] = k.x.apply(&a[k.parent]) + k.s * acc + crm(&v[l], &vj);
        let inertia = link_inertia(model, l);
        let ext = rotate_into(&k.world_rot, &f_ext[l]);
        f[l] = inertia.mul(&a[l]) + crf(&v[l], &inertia.mul(&v[l])) - ext;
    }
    let mut tau = vec![0.0; d];
    for l in (1..n).rev() {
        let k = fr[l].as_ref().unwrap();
        if let Some(j) = k.dof {
            tau[j] += k.mult * k.s.dot(&f[l]);
        }
        let up = k.x.apply_transpose(&f[l]);
        f[k.parent] += up;
    }
    Ok((
        tau,
        RneaCache {
            v,
            a,
            f,
            q: q.to_vec(),
            qd: qd.to_vec(),
            f_ext,
        },
    ))
}

/// World-aligned wrench expressed in a frame with world rotation `r`.
fn rotate_into(r: &Matrix3<f64>, w: &SpatialVector) -> SpatialVector {
    let rt = r.transpose();
    spatial(rt * ang(w), rt * lin(w))
}

fn rotate_out(r: &Matrix3<f64>, w: &SpatialVector) -> SpatialVector {
    spatial(r * ang(w), r * lin(w))
}

/// Gradients of `⟨tau_bar, τ⟩` with respect to `q`, `q̇`, `q̈` and the
/// external wrenches, in time linear in the number of links.
pub fn rnea_vjp(
    model: &RobotModel,
    q: &[f64],
    qd: &[f64],
    tau_bar: &[f64],
    cache: &RneaCache,
) -> Result<RneaGradients, DynamicsError> {
    let d = model.dof();
    let n = model.links().len();
    check("q", q, d)?;
    check("qd", qd, d)?;
    check("tau_bar", tau_bar, d)?;
    if cache.v.len() != n || cache.a.len() != n || cache.f.len() != n || cache.q != q || cache.qd != qd {
        return Err(DynamicsError::StaleCache);
    }
    let fr = frames(model, q);
    let mut q_bar = vec![0.0; d];
    let mut qd_bar = vec![0.0; d];
    let mut qdd_bar = vec![0.0; d];

    // adjoint of the force recursion, base → tips
    let mut f_bar = vec![SpatialVector::zeros(); n];
    for l in 1..n {
        let k = fr[l].as_ref().unwrap();
        let mut fb = k.x.apply(&f_bar[k.parent]);
        if let Some(j) = k.dof {
            q_bar[j] += k.mult * fb.dot(&crf(&k.s, &cache.f[l]));
            fb += k.s * (k.mult * tau_bar[j]);
        }
        f_bar[l] = fb;
    }

    // adjoint of the external wrench: ext enters as −R_wᵀ w
    let mut fext_bar = vec![SpatialVector::zeros(); n];
    let mut ext_moment = vec![Vector3::zeros(); n];
    for l in 0..n {
        let r = fr[l].as_ref().map_or(Matrix3::identity(), |k| k.world_rot);
        let g = rotate_out(&r, &f_bar[l]);
        fext_bar[l] = -g;
        let w = &cache.f_ext[l];
        ext_moment[l] = ang(w).cross(&ang(&g)) + lin(w).cross(&lin(&g));
    }

    // adjoint of velocity/acceleration recursion, tips → base
    let mut a_bar = vec![SpatialVector::zeros(); n];
    let mut v_bar = vec![SpatialVector::zeros(); n];
    for l in (1..n).rev() {
        let k = fr[l].as_ref().unwrap();
        let inertia = link_inertia(model, l);
        let (v, fb) = (&cache.v[l], &f_bar[l]);
        a_bar[l] += inertia.mul(fb);
        v_bar[l] += -crf(fb, &inertia.mul(v)) - inertia.mul(&crm(v, fb));
        let ab = a_bar[l];
        if let Some(j) = k.dof {
            let rate = k.mult * qd[j];
            v_bar[l] += crf(&(k.s * rate), &ab);
            qdd_bar[j] += k.mult * k.s.dot(&ab);
        }
        let vb = v_bar[l];
        let p = k.parent;
        if let Some(j) = k.dof {
            qd_bar[j] += k.mult * (k.s.dot(&vb) - k.s.dot(&crf(v, &ab)));
            let xa = k.x.apply(&cache.a[p]);
            let xv = k.x.apply(&cache.v[p]);
            q_bar[j] -= k.mult * (ab.dot(&crm(&k.s, &xa)) + vb.dot(&crm(&k.s, &xv)));
        }
        let ap = k.x.apply_transpose(&ab);
        let vp = k.x.apply_transpose(&vb);
        a_bar[p] += ap;
        v_bar[p] += vp;
        // rotation of the external wrench by every revolute ancestor
        let em = ext_moment[l];
        ext_moment[p] += em;
        if let (Some(j), JointKind::Revolute) = (k.dof, model.link_joint(l).unwrap().kind) {
            let axis_world = k.world_rot * ang(&k.s);
            q_bar[j] += k.mult * axis_world.dot(&ext_moment[l]);
        }
    }

    Ok(RneaGradients {
        q_bar,
        qd_bar,
        qdd_bar,
        fext_bar,
    })
}

/// Kinetic energy `½ Σ vᵀ I v` from the cached link velocities.
pub fn kinetic_energy(model: &RobotModel, cache: &RneaCache) -> f64 {
    (0..model.links().len())
        .map(|l| 0.5 * cache.v[l].dot(&link_inertia(model, l).mul(&cache.v[l])))
        .sum()
}
