//! `ks ik`: collision-free inverse kinematics for every problem's goals.

use std::path::Path;
use std::time::Instant;

use anyhow::{ensure, Result};
use serde::Serialize;

use ks_core::ik::{self, IkConfig, IkResult};

use crate::output::{create_dir, problem_names, write_json};
use crate::scenario::Scenario;

/// Seeds per problem unless the problem sets `ik_seeds`.
pub const DEFAULT_IK_SEEDS: usize = 32;

#[derive(Debug, Serialize)]
pub struct Solution {
    pub q: Vec<f64>,
    pub position_error: Vec<f64>,
    pub orientation_error: Vec<f64>,
    pub converged: bool,
    pub self_collision_free: bool,
    pub scene_collision_free: bool,
    pub feasible: bool,
    pub seed_index: usize,
    pub iterations: usize,
}

impl From<&IkResult> for Solution {
    fn from(r: &IkResult) -> Self {
        Self {
            q: r.q.clone(),
            position_error: r.position_error.clone(),
            orientation_error: r.orientation_error.clone(),
            converged: r.converged,
            self_collision_free: r.self_collision_free,
            scene_collision_free: r.scene_collision_free,
            feasible: r.feasible(),
            seed_index: r.seed_index,
            iterations: r.iterations,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct IkMetrics {
    pub name: String,
    pub feasible: bool,
    /// Seeds whose solution is converged and collision free.
    pub feasible_solutions: usize,
    pub seeds: usize,
    pub rng_seed: u64,
    pub solve_time: f64,
    pub best: Option<Solution>,
}

#[derive(Debug, Serialize)]
pub struct IkSummary {
    pub problems: usize,
    pub feasible: usize,
    pub total_solve_time: f64,
    pub rows: Vec<IkMetrics>,
}

/// Returns whether every problem has a feasible solution.
pub fn run(scenario_path: &Path, out: &Path) -> Result<bool> {
    let scenario = Scenario::load(scenario_path)?;
    let names = problem_names(&scenario.file.problems)?;
    let model = if scenario.file.problems.is_empty() { None } else { Some(scenario.robot()?) };
    let world = scenario.world()?;
    for p in &scenario.file.problems {
        ensure!(p.ik_seeds != Some(0), "ik_seeds must be at least 1");
        ensure!(!p.goals.is_empty(), "every problem needs at least one goal");
    }
    create_dir(out)?;
    let config = IkConfig::default();
    let mut rows = Vec::new();
    for (doc, name) in scenario.file.problems.iter().zip(&names) {
        let model = model.expect("problems imply a robot");
        let goals: Vec<_> = doc.goals.iter().map(|g| g.spec()).collect();
        let count = doc.ik_seeds.unwrap_or(DEFAULT_IK_SEEDS);
        let seeds = ik::generate_seeds(model, count, doc.rng_seed);
        let t0 = Instant::now();
        let results = ik::solve_ik_collision_free(model, &goals, &seeds, world.as_ref(), &config)?;
        let solve_time = t0.elapsed().as_secs_f64();
        let feasible_solutions = results.iter().filter(|r| r.feasible()).count();
        let m = IkMetrics {
            name: name.clone(),
            feasible: feasible_solutions > 0,
            feasible_solutions,
            seeds: count,
            rng_seed: doc.rng_seed,
            solve_time,
            best: results.first().map(Solution::from),
        };
        write_json(&out.join(format!("{name}.json")), &m)?;
        println!(
            "{name}: {} ({feasible_solutions}/{count} seeds feasible, {solve_time:.2} s)",
            if m.feasible { "solved" } else { "NO SOLUTION" }
        );
        rows.push(m);
    }
    let feasible = rows.iter().filter(|m| m.feasible).count();
    let summary = IkSummary {
        problems: rows.len(),
        feasible,
        total_solve_time: rows.iter().map(|m| m.solve_time).sum(),
        rows,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!("{} problems: {feasible} solved", summary.problems);
    Ok(feasible == summary.problems)
}
