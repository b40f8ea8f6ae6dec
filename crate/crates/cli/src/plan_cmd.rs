//! `ks plan`: plan, validate and export every problem of a scenario.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use nalgebra::Vector3;
use serde::Serialize;

use ks_core::bspline::StateSample;
use ks_core::trajopt::{self, Constraint, ConstraintCheck, CostBreakdown, PlanProblem, PlanResult};
use ks_core::RobotModel;

use crate::output::{create_dir, problem_names, write_json};
use crate::scenario::{ProblemDoc, Scenario};

pub struct PlanFlags {
    pub no_dynamics: bool,
    pub seeds: Option<usize>,
    pub json: bool,
}

#[derive(Debug, Serialize)]
pub struct ProblemMetrics {
    pub name: String,
    pub feasible: bool,
    pub kinematic_ok: bool,
    /// `None` when the robot has no inertia and torque cannot be checked.
    pub dynamics_ok: Option<bool>,
    pub enable_dynamics: bool,
    pub cost_breakdown: Option<CostBreakdown>,
    /// Wall-clock seconds for one solve.
    pub solve_time: f64,
    /// Σ|(θ̇⊙τ)·dt|² over the exported samples.
    pub energy: Option<f64>,
    pub seeds: usize,
    pub rng_seed: u64,
    pub seed_index: Option<usize>,
    pub iterations: Option<usize>,
    pub goal_configuration: Option<Vec<f64>>,
    pub duration: Option<f64>,
    pub violations: Vec<ConstraintCheck>,
    pub checks: Vec<ConstraintCheck>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SummaryRow {
    pub name: String,
    pub feasible: bool,
    pub kinematic_ok: bool,
    pub dynamics_ok: Option<bool>,
    pub solve_time: f64,
    pub energy: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct PlanSummary {
    pub problems: usize,
    pub feasible: usize,
    pub kinematic_ok: usize,
    pub dynamics_ok: usize,
    pub errors: usize,
    pub feasible_rate: f64,
    pub kinematic_rate: f64,
    pub dynamics_rate: f64,
    pub no_dynamics: bool,
    pub seeds_override: Option<usize>,
    pub total_solve_time: f64,
    pub rows: Vec<SummaryRow>,
}

fn rate(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        n as f64 / total as f64
    }
}

/// Σ over samples of |(θ̇⊙τ)·dt|².
pub fn energy(samples: &[StateSample], torques: &[Vec<f64>]) -> f64 {
    let dt = match samples {
        [a, b, ..] => b.t - a.t,
        _ => 0.0,
    };
    samples
        .iter()
        .zip(torques)
        .map(|(s, tau)| s.theta_dot.iter().zip(tau).map(|(v, t)| (v * t * dt).powi(2)).sum::<f64>())
        .sum()
}

fn build_problem(
    doc: &ProblemDoc,
    model: &RobotModel,
    scenario: &Scenario,
    world: Option<&Arc<ks_core::esdf::DenseEsdf>>,
    flags: &PlanFlags,
) -> Result<PlanProblem> {
    let start = doc.start.as_ref().context("planning problems need a `start`")?;
    let mut p = PlanProblem::new(start.state(), doc.goals.iter().map(|g| g.spec()).collect());
    p.world = world.cloned();
    p.weights = doc.weights;
    p.payload = doc.payload.clone();
    p.enable_dynamics = doc.enable_dynamics && !flags.no_dynamics;
    p.gravity = scenario.file.gravity;
    p.rng_seed = doc.rng_seed;
    if let Some(k) = doc.segments {
        p.segments = k;
    }
    if let Some(dt) = doc.dt_u {
        p.dt_u = dt;
    }
    if let Some(n) = flags.seeds.or(doc.seeds) {
        p.seed_count = n;
    }
    if let Some(n) = doc.ik_seeds {
        p.ik_seeds = n;
    }
    p.validate(model)?;
    if let Some(payload) = &p.payload {
        payload.apply(model).context("payload")?;
    }
    Ok(p)
}

fn metrics(name: &str, problem: &PlanProblem, result: &PlanResult, torques: Option<&[Vec<f64>]>, solve_time: f64) -> ProblemMetrics {
    let report = &result.violation_report;
    ProblemMetrics {
        name: name.into(),
        feasible: result.feasible,
        kinematic_ok: report.kinematic_feasible(),
        dynamics_ok: report.get(Constraint::Torque).map(|c| !c.violated()),
        enable_dynamics: problem.enable_dynamics,
        cost_breakdown: Some(result.cost_breakdown),
        solve_time,
        energy: torques.map(|t| energy(&result.samples, t)),
        seeds: problem.seed_count,
        rng_seed: problem.rng_seed,
        seed_index: Some(result.seed_index),
        iterations: Some(result.iterations),
        goal_configuration: Some(result.goal_configuration.clone()),
        duration: result.samples.last().map(|s| s.t),
        violations: report.violations(),
        checks: report.checks.clone(),
        error: None,
    }
}

impl ProblemMetrics {
    fn failed(name: &str, problem: &PlanProblem, error: String, solve_time: f64) -> Self {
        Self {
            name: name.into(),
            feasible: false,
            kinematic_ok: false,
            dynamics_ok: None,
            enable_dynamics: problem.enable_dynamics,
            cost_breakdown: None,
            solve_time,
            energy: None,
            seeds: problem.seed_count,
            rng_seed: problem.rng_seed,
            seed_index: None,
            iterations: None,
            goal_configuration: None,
            duration: None,
            violations: Vec::new(),
            checks: Vec::new(),
            error: Some(error),
        }
    }
}

/// Torques along the exported samples: those of the plan, or recomputed
/// under the payload when dynamics were off.
fn sample_torques(model: &RobotModel, problem: &PlanProblem, result: &PlanResult) -> Result<Option<Vec<Vec<f64>>>> {
    if let Some(t) = &result.torques {
        return Ok(Some(t.clone()));
    }
    let loaded = match &problem.payload {
        Some(p) => p.apply(model)?,
        None => model.clone(),
    };
    if !loaded.has_inertia() {
        return Ok(None);
    }
    Ok(Some(trajopt::torques(&loaded, &result.samples, &Vector3::from(problem.gravity))?))
}

/// Returns whether every problem produced a feasible plan.
pub fn run(scenario_path: &Path, out: &Path, flags: &PlanFlags) -> Result<bool> {
    let scenario = Scenario::load(scenario_path)?;
    let names = problem_names(&scenario.file.problems)?;
    ensure!(flags.seeds != Some(0), "--seeds must be at least 1");
    let model = if scenario.file.problems.is_empty() { None } else { Some(scenario.robot()?) };
    let world = scenario.world()?.map(Arc::new);
    let problems = match model {
        Some(m) => scenario
            .file
            .problems
            .iter()
            .zip(&names)
            .map(|(d, n)| build_problem(d, m, &scenario, world.as_ref(), flags).with_context(|| format!("problem `{n}`")))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    create_dir(out)?;

    let mut rows = Vec::new();
    let mut all_ok = true;
    for (problem, name) in problems.iter().zip(&names) {
        let model = model.expect("problems imply a robot");
        let t0 = Instant::now();
        let result = trajopt::plan(model, problem);
        let solve_time = t0.elapsed().as_secs_f64();
        let m = match result {
            Ok(r) => {
                let torques = sample_torques(model, problem, &r)?;
                let csv_path = out.join(format!("{name}.csv"));
                let f = File::create(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
                trajopt::write_csv(BufWriter::new(f), &r.samples, torques.as_deref())?;
                metrics(name, problem, &r, torques.as_deref(), solve_time)
            }
            Err(e) => ProblemMetrics::failed(name, problem, e.to_string(), solve_time),
        };
        write_json(&out.join(format!("{name}.json")), &m)?;
        if !flags.json {
            let dynamics = match m.dynamics_ok {
                Some(true) => "ok",
                Some(false) => "VIOLATED",
                None => "n/a",
            };
            println!(
                "{name}: {} kinematics {} torque {dynamics} ({:.2} s){}",
                if m.feasible { "feasible" } else { "INFEASIBLE" },
                if m.kinematic_ok { "ok" } else { "VIOLATED" },
                m.solve_time,
                m.error.as_ref().map(|e| format!(" error: {e}")).unwrap_or_default(),
            );
        }
        all_ok &= m.feasible;
        rows.push(m);
    }

    let n = rows.len();
    let count = |f: &dyn Fn(&ProblemMetrics) -> bool| rows.iter().filter(|m| f(m)).count();
    let feasible = count(&|m| m.feasible);
    let kinematic_ok = count(&|m| m.kinematic_ok);
    let dynamics_ok = count(&|m| m.dynamics_ok == Some(true));
    let summary = PlanSummary {
        problems: n,
        feasible,
        kinematic_ok,
        dynamics_ok,
        errors: count(&|m| m.error.is_some()),
        feasible_rate: rate(feasible, n),
        kinematic_rate: rate(kinematic_ok, n),
        dynamics_rate: rate(dynamics_ok, n),
        no_dynamics: flags.no_dynamics,
        seeds_override: flags.seeds,
        total_solve_time: rows.iter().map(|m| m.solve_time).sum(),
        rows: rows
            .into_iter()
            .map(|m| SummaryRow {
                name: m.name,
                feasible: m.feasible,
                kinematic_ok: m.kinematic_ok,
                dynamics_ok: m.dynamics_ok,
                solve_time: m.solve_time,
                energy: m.energy,
            })
            .collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    // header written by hand so that an empty suite still has one
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(out.join("summary.csv"))?;
    w.write_record(["name", "feasible", "kinematic_ok", "dynamics_ok", "solve_time", "energy"])?;
    for r in &summary.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    if flags.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!(
            "{} problems: {feasible} feasible, {kinematic_ok} kinematically valid, {dynamics_ok} within torque limits",
            n
        );
    }
    Ok(all_ok)
}
