//! Self-collision pair pruning: neighbor pass, default-configuration pass and
//! Halton sampling pass.

use std::f64::consts::PI;

use super::{topology, Interval, JointKind, ModelError, RobotModel};
use crate::kinematics::forward_kinematics_single;
use crate::pose::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PruningOptions {
    /// Ignore pairs that collide at the "retract" configuration.
    pub default_configuration: bool,
    /// Ignore pairs that never collide across the sampled configurations.
    pub sampling: bool,
}

impl Default for PruningOptions {
    fn default() -> Self {
        Self {
            default_configuration: true,
            sampling: true,
        }
    }
}

const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131,
];

fn nth_prime(i: usize) -> u64 {
    if i < PRIMES.len() {
        return PRIMES[i];
    }
    let mut count = PRIMES.len();
    let mut p = PRIMES[PRIMES.len() - 1];
    loop {
        p += 2;
        if (3..).step_by(2).take_while(|d| d * d <= p).all(|d| !p.is_multiple_of(d)) {
            if count == i {
                return p;
            }
            count += 1;
        }
    }
}

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Finite sampling box per actuated joint; unbounded revolute joints span
/// `[-π, π]`, unbounded prismatic joints `[-1, 1]` m.
fn sampling_box(model: &RobotModel) -> Vec<Interval> {
    (0..model.dof())
        .map(|d| {
            let j = model.dof_joint(d);
            let fallback = match j.kind {
                JointKind::Prismatic => Interval::new(-1.0, 1.0),
                _ => Interval::new(-PI, PI),
            };
            let p = j.limits.position;
            Interval::new(
                if p.lo.is_finite() { p.lo } else { fallback.lo },
                if p.hi.is_finite() { p.hi } else { fallback.hi },
            )
        })
        .collect()
}

fn colliding(model: &RobotModel, q: &[f64], pairs: &[(usize, usize)]) -> Vec<bool> {
    let state = forward_kinematics_single(model, q, &Pose::identity())
        .expect("sample lies in a finite box");
    pairs
        .iter()
        .map(|&(i, j)| {
            let d = (state.sphere_centers[i] - state.sphere_centers[j]).norm();
            d < state.sphere_radii[i] + state.sphere_radii[j]
        })
        .collect()
}

/// Runs all three pruning passes and returns a model carrying the surviving pairs.
pub fn build_self_collision_pairs(
    model: &RobotModel,
    sample_count: usize,
    seed: u64,
) -> Result<RobotModel, ModelError> {
    build_self_collision_pairs_with(model, sample_count, seed, PruningOptions::default())
}

pub fn build_self_collision_pairs_with(
    model: &RobotModel,
    sample_count: usize,
    seed: u64,
    options: PruningOptions,
) -> Result<RobotModel, ModelError> {
    if sample_count == 0 {
        return Err(super::invalid("sample_count", "must be at least 1"));
    }
    let candidates = topology::neighbor_filtered_pairs(
        &model.link_joints,
        model.sphere_links(),
        model.rigid_body_of_link(),
    );
    let mut keep = vec![true; candidates.len()];

    if options.default_configuration {
        let retract = model
            .named_configuration("retract")
            .ok_or_else(|| ModelError::MissingConfiguration("retract".into()))?;
        for (k, hit) in colliding(model, retract, &candidates).into_iter().enumerate() {
            if hit {
                keep[k] = false;
            }
        }
    }

    if options.sampling {
        let bounds = sampling_box(model);
        let mut ever = vec![false; candidates.len()];
        let mut q = vec![0.0; model.dof()];
        for s in 0..sample_count as u64 {
            for (d, b) in bounds.iter().enumerate() {
                let h = halton(seed.wrapping_add(s).wrapping_add(1), nth_prime(d));
                q[d] = b.lo + h * (b.hi - b.lo);
            }
            for (k, hit) in colliding(model, &q, &candidates).into_iter().enumerate() {
                ever[k] |= hit;
            }
        }
        for (k, e) in ever.into_iter().enumerate() {
            if !e {
                keep[k] = false;
            }
        }
    }

    let pairs = candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect();
    Ok(model.with_self_collision_pairs(pairs))
}
