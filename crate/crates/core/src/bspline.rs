//! Uniform cubic B-spline joint trajectories.
//!
//! Segment `k` of the evaluation sequence is driven by the four consecutive
//! points `[p_k, p_{k+1}, p_{k+2}, p_{k+3}]`. The evaluation sequence is the
//! optimized control points, optionally preceded by a start anchor and three
//! ghost points (pinning the initial position, velocity and acceleration with
//! zero jerk) and optionally followed by three copies of the last control
//! point (bringing the trajectory to rest).

use nalgebra::{DMatrix, DVector, Matrix4, RowVector4};
use thiserror::Error;

pub const DEFAULT_N_INTERP: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum BsplineError {
    #[error("knot interval must be positive and finite, got {0}")]
    InvalidInterval(f64),
    #[error("need at least {needed} evaluation points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("segment {segment} out of range (spline has {count})")]
    SegmentOutOfRange { segment: usize, count: usize },
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("n_interp must be at least 1")]
    ZeroInterp,
}

/// Position and its first three time derivatives at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSample {
    pub t: f64,
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub theta_ddot: Vec<f64>,
    pub theta_dddot: Vec<f64>,
}

impl StateSample {
    pub fn order(&self, k: usize) -> &[f64] {
        match k {
            0 => &self.theta,
            1 => &self.theta_dot,
            2 => &self.theta_ddot,
            _ => &self.theta_dddot,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineTrajectory {
    /// d × K optimized control points.
    pub control_points: DMatrix<f64>,
    pub dt_u: f64,
    /// d × 3 ghost points `(u₋₃, u₋₂, u₋₁)`.
    pub ghost_points: Option<DMatrix<f64>>,
    pub terminal_clamped: bool,
    pub n_interp: usize,
}

const C: [[f64; 4]; 4] = [
    [-1.0, 3.0, -3.0, 1.0],
    [3.0, -6.0, 3.0, 0.0],
    [-3.0, 0.0, 3.0, 0.0],
    [1.0, 4.0, 1.0, 0.0],
];

/// `B(α) = T P(α) C`: maps the four supporting points to
/// `[θ, θ̇, θ̈, θ⃛]`.
pub fn basis(alpha: f64, dt_u: f64) -> Matrix4<f64> {
    let (a, a2, a3) = (alpha, alpha * alpha, alpha * alpha * alpha);
    let p = Matrix4::new(
        a3, a2, a, 1.0, //
        3.0 * a2, 2.0 * a, 1.0, 0.0, //
        6.0 * a, 2.0, 0.0, 0.0, //
        6.0, 0.0, 0.0, 0.0,
    );
    let c = Matrix4::from_rows(&C.map(RowVector4::from)) / 6.0;
    let t = Matrix4::from_diagonal(&nalgebra::Vector4::new(
        1.0,
        1.0 / dt_u,
        1.0 / (dt_u * dt_u),
        1.0 / (dt_u * dt_u * dt_u),
    ));
    t * p * c
}

/// Ghost points `(u₋₃, u₋₂, u₋₁)` for a start state with zero jerk.
pub fn ghost_points(theta0: &[f64], theta_dot0: &[f64], theta_ddot0: &[f64], dt_u: f64) -> DMatrix<f64> {
    let d = theta0.len();
    let dt2 = dt_u * dt_u;
    DMatrix::from_fn(d, 3, |j, c| {
        let (p, v, a) = (theta0[j], theta_dot0[j], theta_ddot0[j]);
        match c {
            0 => -a * dt2 / 6.0 + p,
            1 => a * dt2 / 3.0 + p + v * dt_u,
            _ => 11.0 * a * dt2 / 6.0 + p + 2.0 * v * dt_u,
        }
    })
}

/// Implied anchor preceding the ghost points: the value that makes the
/// first segment's jerk vanish, so the spline starts exactly at the given state.
fn start_anchor(ghost: &DMatrix<f64>) -> DVector<f64> {
    ghost.column(0) * 3.0 - ghost.column(1) * 3.0 + ghost.column(2)
}

/// Where an evaluation-sequence point comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSource {
    Anchor,
    Ghost(usize),
    Control(usize),
    Repeat,
}

impl SplineTrajectory {
    pub fn new(
        control_points: DMatrix<f64>,
        dt_u: f64,
        ghost_points: Option<DMatrix<f64>>,
        terminal_clamped: bool,
        n_interp: usize,
    ) -> Result<Self, BsplineError> {
        if !(dt_u > 0.0 && dt_u.is_finite()) {
            return Err(BsplineError::InvalidInterval(dt_u));
        }
        if n_interp == 0 {
            return Err(BsplineError::ZeroInterp);
        }
        if let Some(g) = &ghost_points {
            if g.nrows() != control_points.nrows() || g.ncols() != 3 {
                return Err(BsplineError::Shape(format!(
                    "ghost points are {}x{}, expected {}x3",
                    g.nrows(),
                    g.ncols(),
                    control_points.nrows()
                )));
            }
        }
        let s = Self {
            control_points,
            dt_u,
            ghost_points,
            terminal_clamped,
            n_interp,
        };
        let needed = if s.ghost_points.is_some() { 1 } else { 4 };
        if s.control_points.ncols() < needed {
            return Err(BsplineError::TooFewPoints {
                needed,
                got: s.control_points.ncols(),
            });
        }
        Ok(s)
    }

    /// Spline starting at `(θ₀, θ̇₀, θ̈₀)` with the given free control points
    /// and terminal rest.
    pub fn anchored(
        theta0: &[f64],
        theta_dot0: &[f64],
        theta_ddot0: &[f64],
        control_points: DMatrix<f64>,
        dt_u: f64,
        n_interp: usize,
    ) -> Result<Self, BsplineError> {
        if !(dt_u > 0.0 && dt_u.is_finite()) {
            return Err(BsplineError::InvalidInterval(dt_u));
        }
        let g = ghost_points(theta0, theta_dot0, theta_ddot0, dt_u);
        Self::new(control_points, dt_u, Some(g), true, n_interp)
    }

    pub fn dof(&self) -> usize {
        self.control_points.nrows()
    }

    fn sources(&self) -> Vec<PointSource> {
        let mut out = Vec::new();
        if self.ghost_points.is_some() {
            out.push(PointSource::Anchor);
            out.extend((0..3).map(PointSource::Ghost));
        }
        out.extend((0..self.control_points.ncols()).map(PointSource::Control));
        if self.terminal_clamped {
            out.extend([PointSource::Repeat; 3]);
        }
        out
    }

    fn point(&self, src: PointSource) -> DVector<f64> {
        let g = || self.ghost_points.as_ref().expect("ghost points present");
        match src {
            PointSource::Anchor => start_anchor(g()),
            PointSource::Ghost(i) => g().column(i).into_owned(),
            PointSource::Control(i) => self.control_points.column(i).into_owned(),
            PointSource::Repeat => self.control_points.column(self.control_points.ncols() - 1).into_owned(),
        }
    }

    /// Number of evaluation segments.
    pub fn segment_count(&self) -> usize {
        self.sources().len() - 3
    }

    pub fn duration(&self) -> f64 {
        self.segment_count() as f64 * self.dt_u
    }

    /// State at parameter `alpha` of `segment`.
    pub fn evaluate(&self, segment: usize, alpha: f64) -> Result<StateSample, BsplineError> {
        let count = self.segment_count();
        if segment >= count {
            return Err(BsplineError::SegmentOutOfRange { segment, count });
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(BsplineError::AlphaOutOfRange(alpha));
        }
        let src = self.sources();
        let pts: Vec<DVector<f64>> = (0..4).map(|i| self.point(src[segment + i])).collect();
        Ok(self.eval_points(&pts, segment, alpha))
    }

    fn eval_points(&self, pts: &[DVector<f64>], segment: usize, alpha: f64) -> StateSample {
        let b = basis(alpha, self.dt_u);
        let d = self.dof();
        let mut rows = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
        for (r, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|i| b[(r, i)] * pts[i][j]).sum();
            }
        }
        let [theta, theta_dot, theta_ddot, theta_dddot] = rows;
        StateSample {
            t: (segment as f64 + alpha) * self.dt_u,
            theta,
            theta_dot,
            theta_ddot,
            theta_dddot,
        }
    }

    /// `(segment, α)` of each uniform sample at `n` samples per segment,
    /// plus the final endpoint.
    pub fn sample_points(&self, n: usize) -> Vec<(usize, f64)> {
        let s = self.segment_count();
        let mut out: Vec<(usize, f64)> = (0..s)
            .flat_map(|k| (0..n).map(move |i| (k, i as f64 / n as f64)))
            .collect();
        out.push((s - 1, 1.0));
        out
    }

    pub fn sample_uniform(&self) -> Vec<StateSample> {
        self.sample_with(self.n_interp)
    }

    /// Uniform samples at an arbitrary density (`n` per segment).
    pub fn sample_with(&self, n: usize) -> Vec<StateSample> {
        let src = self.sources();
        let pts: Vec<DVector<f64>> = src.iter().map(|s| self.point(*s)).collect();
        self.sample_points(n.max(1))
            .into_iter()
            .map(|(k, a)| self.eval_points(&pts[k..k + 4], k, a))
            .collect()
    }

    /// Gradient with respect to the control points given per-sample upstream
    /// gradients (d × 4, columns `[θ, θ̇, θ̈, θ⃛]`) aligned with
    /// [`Self::sample_uniform`]. Anchor and ghost points are fixed boundary
    /// data; the terminal repeats are copies of the last control point and
    /// pass their gradient to it.
    pub fn vjp(&self, sample_grads: &[DMatrix<f64>]) -> Result<DMatrix<f64>, BsplineError> {
        let points = self.sample_points(self.n_interp);
        if sample_grads.len() != points.len() {
            return Err(BsplineError::Shape(format!(
                "{} sample gradients for {} samples",
                sample_grads.len(),
                points.len()
            )));
        }
        let d = self.dof();
        let src = self.sources();
        let last = self.control_points.ncols() - 1;
        let mut out = DMatrix::zeros(d, self.control_points.ncols());
        for (g, &(k, a)) in sample_grads.iter().zip(&points) {
            if g.nrows() != d || g.ncols() != 4 {
                return Err(BsplineError::Shape(format!("sample gradient is {}x{}", g.nrows(), g.ncols())));
            }
            let b = basis(a, self.dt_u);
            for i in 0..4 {
                let c = match src[k + i] {
                    PointSource::Control(c) => c,
                    PointSource::Repeat => last,
                    _ => continue,
                };
                for j in 0..d {
                    let mut acc = 0.0;
                    for r in 0..4 {
                        acc += b[(r, i)] * g[(j, r)];
                    }
                    out[(j, c)] += acc;
                }
            }
        }
        Ok(out)
    }
}
