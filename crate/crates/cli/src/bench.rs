//! `ks esdf-bench`: TSDF to ESDF timing, memory and recall.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ks_core::esdf::{self, DenseEsdf, EsdfConfig, Recall, Seeding};
use ks_core::geometry::{scene_sdf, Shape};
use ks_core::tsdf::BLOCK_VOXELS;

use crate::output::{create_dir, median, write_json};
use crate::scenario::{EsdfDoc, Scenario};

pub const WARMUP: usize = 3;
pub const REPETITIONS: usize = 10;
/// Rejection-sampling budget per requested probe.
const PROBE_ATTEMPTS: usize = 1000;

pub struct BenchFlags {
    pub seeding: Option<Seeding>,
    pub brute_force: bool,
}

/// Milliseconds over the measured repetitions.
#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl Timing {
    fn of(ms: &[f64]) -> Self {
        Self {
            median_ms: median(ms),
            min_ms: ms.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: ms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TsdfReport {
    pub voxel_size: f64,
    pub truncation: f64,
    pub primitives: usize,
    pub depth_frames: usize,
    pub allocated_blocks: usize,
    pub peak_blocks: usize,
    pub allocated_voxels: usize,
    pub build: Timing,
}

#[derive(Debug, Serialize)]
pub struct StageTimings {
    pub seed: Timing,
    pub propagate: Timing,
    pub signs: Timing,
    pub total: Timing,
}

#[derive(Debug, Serialize)]
pub struct AnalyticReport {
    pub probes: usize,
    pub probe_radius: f64,
    pub probe_band: f64,
    pub recall: Recall,
    pub recall_value: f64,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    pub max_abs_error_voxels: f64,
}

#[derive(Debug, Serialize)]
pub struct BruteForceReport {
    /// Largest per-cell distance difference in ESDF voxels.
    pub max_abs_diff_voxels: f64,
    pub mismatched_cells: usize,
    /// Single measurement.
    pub time_ms: f64,
    pub probes: usize,
    pub recall: Recall,
    pub recall_value: f64,
}

#[derive(Debug, Serialize)]
pub struct ModeReport {
    pub seeding: Seeding,
    pub seeds: usize,
    pub no_seeds: bool,
    pub timings: StageTimings,
    pub analytic: Option<AnalyticReport>,
    pub brute_force: Option<BruteForceReport>,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub rng_seed: u64,
    pub warmup: usize,
    pub repetitions: usize,
    pub esdf_dims: [usize; 3],
    pub esdf_voxel_size: f64,
    pub esdf_cells: usize,
    pub tsdf: TsdfReport,
    pub modes: Vec<ModeReport>,
    pub notes: Vec<String>,
}

#[derive(Debug, Serialize)]
struct TimingRow<'a> {
    seeding: Seeding,
    stage: &'a str,
    median_ms: f64,
    min_ms: f64,
    max_ms: f64,
}

struct RecallRow {
    seeding: Seeding,
    reference: &'static str,
    probes: usize,
    colliding: usize,
    detected: usize,
    recall: f64,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Probes uniform in the box whose true distance lies in `(0, band]`.
fn analytic_probes(cfg: &EsdfConfig, n: usize, band: f64, truth: &[Shape], rng_seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let hi = cfg.origin + Vector3::from(cfg.dims.map(|d| d as f64)) * cfg.voxel_size;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n * PROBE_ATTEMPTS {
        if out.len() == n {
            break;
        }
        let p = Vector3::from_fn(|k, _| rng.gen_range(cfg.origin[k]..hi[k]));
        let d = scene_sdf(truth, &p);
        if d > 0.0 && d <= band {
            out.push(p);
        }
    }
    out
}

fn uniform_probes(cfg: &EsdfConfig, n: usize, rng_seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let hi = cfg.origin + Vector3::from(cfg.dims.map(|d| d as f64)) * cfg.voxel_size;
    (0..n).map(|_| Vector3::from_fn(|k, _| rng.gen_range(cfg.origin[k]..hi[k]))).collect()
}

fn analytic(e: &DenseEsdf, doc: &EsdfDoc, probes: &[Vector3<f64>], truth: &[Shape]) -> AnalyticReport {
    let recall = esdf::collision_recall(e, probes, doc.probe_radius(), |p| scene_sdf(truth, p));
    let errors: Vec<f64> = probes.iter().map(|p| (e.query(p).distance - scene_sdf(truth, p)).abs()).collect();
    let max = errors.iter().copied().fold(0.0, f64::max);
    AnalyticReport {
        probes: probes.len(),
        probe_radius: doc.probe_radius(),
        probe_band: doc.probe_band(),
        recall,
        recall_value: recall.value(),
        max_abs_error: max,
        mean_abs_error: errors.iter().sum::<f64>() / errors.len().max(1) as f64,
        max_abs_error_voxels: max / e.config.voxel_size,
    }
}

fn brute_force(e: &DenseEsdf, seeds: &esdf::SeedSet, doc: &EsdfDoc, probes: &[Vector3<f64>]) -> BruteForceReport {
    let t = Instant::now();
    let oracle = esdf::brute_force_sq_dist(seeds);
    let time_ms = ms(t);
    let root = |d: i64| if d == i64::MAX { f64::INFINITY } else { (d as f64).sqrt() };
    let mut max_diff: f64 = 0.0;
    let mut mismatched = 0;
    for (a, b) in e.sq_dist.iter().zip(&oracle) {
        if a != b {
            mismatched += 1;
            max_diff = max_diff.max((root(*a) - root(*b)).abs());
        }
    }
    // oracle field with the same signs
    let mut reference = e.clone();
    for (i, d) in oracle.iter().enumerate() {
        let sign = if e.distance[i] < 0.0 { -1.0 } else { 1.0 };
        reference.sq_dist[i] = *d;
        reference.distance[i] = sign * root(*d);
    }
    let recall = esdf::collision_recall(e, probes, doc.probe_radius(), |p| reference.query(p).distance);
    BruteForceReport {
        max_abs_diff_voxels: max_diff,
        mismatched_cells: mismatched,
        time_ms,
        probes: probes.len(),
        recall,
        recall_value: recall.value(),
    }
}

pub fn run(scenario_path: &Path, out: &Path, flags: &BenchFlags) -> Result<()> {
    let scenario = Scenario::load(scenario_path)?;
    let doc = scenario.file.esdf.as_ref().context("esdf-bench needs an `esdf` section")?;
    create_dir(out)?;
    let truth = scenario.truth_shapes();
    let mut notes = Vec::new();
    if !scenario.has_world() {
        notes.push("scene has no primitives or depth frames".to_string());
    }

    let mut tsdf_ms = Vec::new();
    let mut tsdf = None;
    for rep in 0..WARMUP + REPETITIONS {
        let t = Instant::now();
        let built = scenario.tsdf()?;
        if rep >= WARMUP {
            tsdf_ms.push(ms(t));
        }
        tsdf = Some(built);
    }
    let tsdf = tsdf.expect("at least one repetition");

    let modes = match flags.seeding {
        Some(s) => vec![s],
        None => vec![Seeding::Scatter, Seeding::Gather],
    };
    let base = doc.config();
    let probes = if truth.is_empty() {
        Vec::new()
    } else {
        analytic_probes(&base, doc.probes, doc.probe_band(), &truth, doc.rng_seed)
    };
    if !truth.is_empty() && probes.len() < doc.probes {
        notes.push(format!("only {} of {} analytic probes found in the band", probes.len(), doc.probes));
    }
    let mut reports = Vec::new();
    for seeding in modes {
        let cfg = EsdfConfig { seeding, ..base.clone() };
        let (mut seed_ms, mut prop_ms, mut sign_ms, mut total_ms) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut last = None;
        for rep in 0..WARMUP + REPETITIONS {
            let t = Instant::now();
            let seeds = esdf::seed(&tsdf, &cfg);
            let a = ms(t);
            let t = Instant::now();
            let unsigned = esdf::propagate(&seeds, &cfg);
            let b = ms(t);
            let copy = unsigned.clone();
            let t = Instant::now();
            let signed = esdf::recover_signs(copy, &tsdf);
            let c = ms(t);
            if rep >= WARMUP {
                seed_ms.push(a);
                prop_ms.push(b);
                sign_ms.push(c);
                total_ms.push(a + b + c);
            }
            last = Some((seeds, signed));
        }
        let (seeds, e) = last.expect("at least one repetition");
        let count = seeds.count();
        if count == 0 {
            notes.push(format!("{seeding:?} seeding found no surface sites; the field is empty").to_lowercase());
        }
        let analytic = (count > 0 && !probes.is_empty()).then(|| analytic(&e, doc, &probes, &truth));
        let brute_force = flags.brute_force.then(|| {
            let bf_probes = if probes.is_empty() { uniform_probes(&base, doc.probes, doc.rng_seed) } else { probes.clone() };
            brute_force(&e, &seeds, doc, &bf_probes)
        });
        reports.push(ModeReport {
            seeding,
            seeds: count,
            no_seeds: count == 0,
            timings: StageTimings {
                seed: Timing::of(&seed_ms),
                propagate: Timing::of(&prop_ms),
                signs: Timing::of(&sign_ms),
                total: Timing::of(&total_ms),
            },
            analytic,
            brute_force,
        });
    }

    let tc = &tsdf.config;
    let report = BenchReport {
        rng_seed: doc.rng_seed,
        warmup: WARMUP,
        repetitions: REPETITIONS,
        esdf_dims: base.dims,
        esdf_voxel_size: base.voxel_size,
        esdf_cells: base.len(),
        tsdf: TsdfReport {
            voxel_size: tc.voxel_size,
            truncation: tc.truncation,
            primitives: scenario.primitives.len(),
            depth_frames: scenario.frames.len(),
            allocated_blocks: tsdf.allocated_blocks(),
            peak_blocks: tsdf.peak_blocks(),
            allocated_voxels: tsdf.allocated_blocks() * BLOCK_VOXELS,
            build: Timing::of(&tsdf_ms),
        },
        modes: reports,
        notes,
    };
    write_json(&out.join("bench.json"), &report)?;
    write_csvs(out, &report)?;
    print_report(&report);
    Ok(())
}

fn write_csvs(out: &Path, r: &BenchReport) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("timings.csv"))?;
    for m in &r.modes {
        let t = &m.timings;
        let stages = [("tsdf", &r.tsdf.build), ("seed", &t.seed), ("propagate", &t.propagate), ("signs", &t.signs), ("total", &t.total)];
        for (stage, t) in stages {
            w.serialize(TimingRow {
                seeding: m.seeding,
                stage,
                median_ms: t.median_ms,
                min_ms: t.min_ms,
                max_ms: t.max_ms,
            })?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("recall.csv"))?;
    // header even when no row follows
    w.write_record(["seeding", "reference", "probes", "colliding", "detected", "recall"])?;
    let mut rows = Vec::new();
    for m in &r.modes {
        if let Some(a) = &m.analytic {
            rows.push(RecallRow {
                seeding: m.seeding,
                reference: "analytic",
                probes: a.probes,
                colliding: a.recall.colliding,
                detected: a.recall.detected,
                recall: a.recall_value,
            });
        }
        if let Some(b) = &m.brute_force {
            rows.push(RecallRow {
                seeding: m.seeding,
                reference: "brute_force",
                probes: b.probes,
                colliding: b.recall.colliding,
                detected: b.recall.detected,
                recall: b.recall_value,
            });
        }
    }
    for row in rows {
        w.write_record([
            format!("{:?}", row.seeding).to_lowercase(),
            row.reference.to_string(),
            row.probes.to_string(),
            row.colliding.to_string(),
            row.detected.to_string(),
            row.recall.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn print_report(r: &BenchReport) {
    println!(
        "tsdf: {} blocks ({} voxels), built in {:.2} ms (median of {})",
        r.tsdf.allocated_blocks, r.tsdf.allocated_voxels, r.tsdf.build.median_ms, r.repetitions
    );
    for m in &r.modes {
        let name = format!("{:?}", m.seeding).to_lowercase();
        println!("{name}: {} seeds, esdf {:.2} ms", m.seeds, m.timings.total.median_ms);
        if let Some(a) = &m.analytic {
            println!(
                "  analytic: recall {:.4} ({}/{}), max error {:.2} voxels",
                a.recall_value, a.recall.detected, a.recall.colliding, a.max_abs_error_voxels
            );
        }
        if let Some(b) = &m.brute_force {
            println!(
                "  brute force: max |dd| {} voxels over {} mismatched cells, recall {:.4}",
                b.max_abs_diff_voxels, b.mismatched_cells, b.recall_value
            );
        }
    }
    for n in &r.notes {
        println!("note: {n}");
    }
}
