//! Scenario files: a robot, a world and a list of planning problems.
//!
//! Relative paths inside a scenario resolve against the scenario's own
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use ks_core::esdf::{self, DenseEsdf, EsdfConfig, Seeding};
use ks_core::geometry::{Shape, ShapeDoc};
use ks_core::ik::GoalSpec;
use ks_core::trajopt::{CostWeights, Payload, StartState};
use ks_core::tsdf::{CameraIntrinsics, DepthFrame, SparseTsdf, TsdfConfig};
use ks_core::{load_robot, Pose, RobotModel};

/// Largest ESDF grid a scenario may request.
const MAX_ESDF_CELLS: usize = 1 << 27;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub robot: Option<PathBuf>,
    #[serde(default)]
    pub world: WorldDoc,
    pub esdf: Option<EsdfDoc>,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub problems: Vec<ProblemDoc>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldDoc {
    #[serde(default)]
    pub cuboids: Vec<ShapeDoc>,
    #[serde(default)]
    pub spheres: Vec<ShapeDoc>,
    /// Paths to depth frame files.
    #[serde(default)]
    pub depth_frames: Vec<PathBuf>,
    /// Shapes seen by the depth frames, used only as ground truth.
    #[serde(default)]
    pub reference: Vec<ShapeDoc>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsdfDoc {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub voxel_size: f64,
    #[serde(default = "default_seeding")]
    pub seeding: Seeding,
    /// Defaults to half the ESDF voxel size.
    pub tsdf_voxel: Option<f64>,
    /// Defaults to four TSDF voxels.
    pub truncation: Option<f64>,
    #[serde(default = "default_capacity")]
    pub block_capacity: usize,
    /// Benchmark probe count.
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// Probe sphere radius; defaults to one ESDF voxel.
    pub probe_radius: Option<f64>,
    /// Probes are drawn outside the surface up to this distance; defaults to
    /// three ESDF voxels.
    pub probe_band: Option<f64>,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_seeding() -> Seeding {
    Seeding::Scatter
}

fn default_capacity() -> usize {
    1 << 18
}

fn default_probes() -> usize {
    10_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDoc {
    pub name: Option<String>,
    pub start: Option<StartDoc>,
    pub goals: Vec<GoalDoc>,
    #[serde(default)]
    pub weights: CostWeights,
    pub payload: Option<Payload>,
    #[serde(default = "yes")]
    pub enable_dynamics: bool,
    pub segments: Option<usize>,
    pub dt_u: Option<f64>,
    pub seeds: Option<usize>,
    pub ik_seeds: Option<usize>,
    #[serde(default)]
    pub rng_seed: u64,
}

fn yes() -> bool {
    true
}

/// Either a bare configuration (at rest) or a full boundary state.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum StartDoc {
    Rest(Vec<f64>),
    State {
        theta: Vec<f64>,
        theta_dot: Option<Vec<f64>>,
        theta_ddot: Option<Vec<f64>>,
    },
}

impl StartDoc {
    pub fn state(&self) -> StartState {
        match self {
            StartDoc::Rest(q) => StartState::at_rest(q.clone()),
            StartDoc::State { theta, theta_dot, theta_ddot } => {
                let zero = vec![0.0; theta.len()];
                StartState {
                    theta: theta.clone(),
                    theta_dot: theta_dot.clone().unwrap_or_else(|| zero.clone()),
                    theta_ddot: theta_ddot.clone().unwrap_or(zero),
                }
            }
        }
    }
}

/// Target pose of one link. Without `rpy` only the position is constrained.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalDoc {
    pub link: String,
    pub xyz: [f64; 3],
    pub rpy: Option<[f64; 3]>,
    #[serde(default = "default_position_tol")]
    pub position_tol: f64,
    #[serde(default = "default_orientation_tol")]
    pub orientation_tol: f64,
    pub weight_pos: Option<f64>,
    pub weight_rot: Option<f64>,
}

fn default_position_tol() -> f64 {
    1e-3
}

fn default_orientation_tol() -> f64 {
    1e-2
}

impl GoalDoc {
    pub fn spec(&self) -> GoalSpec {
        let mut g = match self.rpy {
            Some(rpy) => GoalSpec::new(&self.link, Pose::from_xyz_rpy(self.xyz, rpy)),
            None => GoalSpec::position(&self.link, Vector3::from(self.xyz)),
        }
        .with_tolerances(self.position_tol, self.orientation_tol);
        if let Some(w) = self.weight_pos {
            g.weight_pos = w;
        }
        if let Some(w) = self.weight_rot {
            g.weight_rot = w;
        }
        g
    }
}

/// Serde form of a depth image: row-major depths in meters, 0 for no return.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthFrameDoc {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world pose.
    pub pose: Pose,
    pub depth: Vec<f32>,
}

impl DepthFrameDoc {
    pub fn frame(&self) -> Result<DepthFrame> {
        ensure!(
            self.depth.len() == self.width * self.height,
            "depth has {} entries for a {}x{} image",
            self.depth.len(),
            self.width,
            self.height
        );
        Ok(DepthFrame {
            intrinsics: CameraIntrinsics {
                width: self.width,
                height: self.height,
                fx: self.fx,
                fy: self.fy,
                cx: self.cx,
                cy: self.cy,
            },
            pose: self.pose,
            depth: self.depth.clone(),
        })
    }
}

/// A parsed scenario with every referenced file loaded.
pub struct Scenario {
    pub file: ScenarioFile,
    pub robot: Option<RobotModel>,
    pub primitives: Vec<Shape>,
    pub frames: Vec<DepthFrame>,
    pub reference: Vec<Shape>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let file: ScenarioFile = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let robot = match &file.robot {
            Some(r) => {
                let p = base.join(r);
                let text = fs::read_to_string(&p).with_context(|| format!("reading robot {}", p.display()))?;
                Some(load_robot(&text).with_context(|| format!("loading robot {}", p.display()))?)
            }
            None => None,
        };
        let frames = file
            .world
            .depth_frames
            .iter()
            .map(|f| {
                let p = base.join(f);
                read_json::<DepthFrameDoc>(&p)?.frame().with_context(|| format!("depth frame {}", p.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        for d in file.world.cuboids.iter() {
            ensure!(matches!(d, ShapeDoc::Cuboid { .. }), "world.cuboids holds a non-cuboid shape");
        }
        for d in file.world.spheres.iter() {
            ensure!(matches!(d, ShapeDoc::Sphere { .. }), "world.spheres holds a non-sphere shape");
        }
        let primitives: Vec<Shape> = file.world.cuboids.iter().chain(&file.world.spheres).map(Shape::from).collect();
        let reference = file.world.reference.iter().map(Shape::from).collect();
        ensure!(primitives.iter().all(Shape::is_finite), "non-finite world primitive");
        if let Some(e) = &file.esdf {
            e.check()?;
        }
        ensure!(file.gravity.iter().all(|g| g.is_finite()), "non-finite gravity");
        Ok(Self {
            file,
            robot,
            primitives,
            frames,
            reference,
        })
    }

    pub fn robot(&self) -> Result<&RobotModel> {
        self.robot.as_ref().context("scenario has no robot")
    }

    pub fn has_world(&self) -> bool {
        !self.primitives.is_empty() || !self.frames.is_empty()
    }

    /// Analytic ground truth: stamped primitives plus reference shapes.
    pub fn truth_shapes(&self) -> Vec<Shape> {
        self.primitives.iter().chain(&self.reference).cloned().collect()
    }

    /// TSDF holding every stamped primitive and integrated depth frame.
    pub fn tsdf(&self) -> Result<SparseTsdf> {
        let e = self.file.esdf.as_ref().context("scenario world needs an `esdf` section")?;
        let mut t = SparseTsdf::new(e.tsdf_config())?;
        for s in &self.primitives {
            t.stamp_primitive(s)?;
        }
        for f in &self.frames {
            t.integrate_depth(f)?;
        }
        Ok(t)
    }

    /// World ESDF for planning and IK, `None` for an empty world.
    pub fn world(&self) -> Result<Option<DenseEsdf>> {
        if !self.has_world() {
            return Ok(None);
        }
        let cfg = self.file.esdf.as_ref().context("scenario world needs an `esdf` section")?.config();
        Ok(Some(esdf::build(&self.tsdf()?, &cfg)))
    }
}

impl EsdfDoc {
    pub fn check(&self) -> Result<()> {
        ensure!(self.voxel_size > 0.0 && self.voxel_size.is_finite(), "esdf.voxel_size must be positive");
        for k in 0..3 {
            ensure!(
                self.lo[k].is_finite() && self.hi[k].is_finite() && self.hi[k] > self.lo[k],
                "esdf box must satisfy lo < hi on every axis"
            );
        }
        let cells = self.config().len();
        ensure!(cells <= MAX_ESDF_CELLS, "esdf grid of {cells} cells is too large");
        if let Some(v) = self.tsdf_voxel {
            ensure!(v > 0.0 && v.is_finite(), "esdf.tsdf_voxel must be positive");
        }
        for (name, v) in [("probe_radius", self.probe_radius), ("probe_band", self.probe_band)] {
            if let Some(v) = v {
                ensure!(v > 0.0 && v.is_finite(), "esdf.{name} must be positive");
            }
        }
        if let Err(e) = SparseTsdf::new(self.tsdf_config()) {
            bail!("esdf: {e}");
        }
        Ok(())
    }

    pub fn config(&self) -> EsdfConfig {
        EsdfConfig::covering(Vector3::from(self.lo), Vector3::from(self.hi), self.voxel_size, self.seeding)
    }

    pub fn tsdf_voxel(&self) -> f64 {
        self.tsdf_voxel.unwrap_or(0.5 * self.voxel_size)
    }

    pub fn tsdf_config(&self) -> TsdfConfig {
        let mut c = TsdfConfig::new(self.tsdf_voxel());
        if let Some(t) = self.truncation {
            c.truncation = t;
        }
        c.capacity = self.block_capacity;
        c
    }

    pub fn probe_radius(&self) -> f64 {
        self.probe_radius.unwrap_or(self.voxel_size)
    }

    pub fn probe_band(&self) -> f64 {
        self.probe_band.unwrap_or(3.0 * self.voxel_size)
    }
}

/// Display name of problem `i`.
pub fn problem_name(doc: &ProblemDoc, i: usize) -> String {
    doc.name.clone().unwrap_or_else(|| format!("problem_{i:03}"))
}
