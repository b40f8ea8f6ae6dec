//! End-to-end runs of the `ks` binary. Every emitted file is parsed back.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

use ks_core::fixtures::{self, blocked_branch, payload_arm, payload_problem, planar_arm, tool_payload, PAYLOAD_TORQUE_LIMITS, VERTICAL_GRAVITY};
use ks_core::robot::document::{MimicDoc, RobotDocument};
use ks_core::synth::{intrinsics, look_at, render_depth};
use ks_core::geometry::Shape;
use nalgebra::Vector3;

fn ks(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ks")).args(args).output().expect("run ks")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, value: &impl serde::Serialize) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Parses every JSON and CSV file under `dir`; returns the number parsed.
fn round_trip_all(dir: &Path) -> usize {
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        match p.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                read_json(&p);
                n += 1;
            }
            Some("csv") => {
                let mut r = csv::Reader::from_path(&p).unwrap();
                let width = r.headers().unwrap().len();
                assert!(width > 0, "{} has no header", p.display());
                for rec in r.records() {
                    assert_eq!(rec.unwrap().len(), width, "{}", p.display());
                }
                n += 1;
            }
            _ => panic!("unexpected output {}", p.display()),
        }
    }
    n
}

fn csv_rows(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

// robot validate

#[test]
fn valid_robot_passes_every_invariant() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "arm.json", &fixtures::mimic_gripper_arm());
    let o = ks(&["robot", "validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 9);
    assert!(!out.contains("FAIL"));
}

#[test]
fn cyclic_robot_fails_and_names_the_cycle() {
    let dir = TempDir::new().unwrap();
    let mut doc = planar_arm(&[0.3, 0.2], &[1.0, 1.0], 0.02, 1);
    let mut closing = doc.joints[0].clone();
    closing.name = "closing".into();
    closing.parent = "link2".into();
    closing.child = "base".into();
    doc.joints.push(closing);
    let p = write(dir.path(), "cycle.json", &doc);
    let o = ks(&["robot", "validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let fail = stdout(&o).lines().find(|l| l.starts_with("FAIL")).unwrap().to_string();
    assert!(fail.contains("cycle"), "{fail}");
    for j in ["closing", "j1", "j2"] {
        assert!(fail.contains(j), "{fail}");
    }
}

#[test]
fn mimic_of_mimic_fails_and_names_the_joint() {
    let dir = TempDir::new().unwrap();
    let mut doc: RobotDocument = planar_arm(&[0.3, 0.2, 0.1], &[1.0, 1.0, 1.0], 0.02, 1);
    doc.joints[1].mimic = Some(MimicDoc { source: "j1".into(), multiplier: 1.0, offset: 0.0 });
    doc.joints[2].mimic = Some(MimicDoc { source: "j2".into(), multiplier: 1.0, offset: 0.0 });
    let p = write(dir.path(), "mimic.json", &doc);
    let o = ks(&["robot", "validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let fail = stdout(&o).lines().find(|l| l.starts_with("FAIL")).unwrap().to_string();
    assert!(fail.starts_with("FAIL  mimic joints"), "{fail}");
    assert!(fail.contains("`j3`"), "{fail}");
    // earlier invariants held, later ones were not reached
    assert!(stdout(&o).contains("PASS  tree with a single root and no cycles"));
    assert!(stdout(&o).contains("SKIP  tool links"));
}

#[test]
fn input_and_usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    // malformed robot documents are a failed schema invariant
    assert_eq!(ks(&["robot", "validate", bad.to_str().unwrap()]).status.code(), Some(1));
    let missing = dir.path().join("missing.json");
    assert_eq!(ks(&["robot", "validate", missing.to_str().unwrap()]).status.code(), Some(2));
    let out = dir.path().join("out");
    assert_eq!(ks(&["plan", bad.to_str().unwrap(), "-o", out.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(ks(&["plan", missing.to_str().unwrap(), "-o", out.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(ks(&["plan", "--bogus"]).status.code(), Some(2));
    assert_eq!(ks(&["esdf-bench", "x.json", "-o", "y", "--seeding", "sideways"]).status.code(), Some(2));
    assert_eq!(ks(&[]).status.code(), Some(2));
    assert_eq!(ks(&["--help"]).status.code(), Some(0));
    // a scenario naming a robot that does not exist
    let s = write(dir.path(), "s.json", &json!({"robot": "nowhere.json", "problems": []}));
    assert_eq!(ks(&["plan", s.to_str().unwrap(), "-o", out.to_str().unwrap()]).status.code(), Some(2));
    // unknown fields are schema errors
    let s = write(dir.path(), "s2.json", &json!({"problems": [], "extra": 1}));
    assert_eq!(ks(&["plan", s.to_str().unwrap(), "-o", out.to_str().unwrap()]).status.code(), Some(2));
}

// plan

/// The 20-problem payload swing suite as a scenario file.
fn payload_scenario(dir: &Path, count: usize) -> PathBuf {
    let doc = payload_arm(PAYLOAD_TORQUE_LIMITS);
    let model = fixtures::model(doc.clone());
    write(dir, "payload_arm.json", &doc);
    let problems: Vec<Value> = (0..count)
        .map(|i| {
            let p = payload_problem(&model, i);
            let g = &p.goals[0];
            json!({
                "name": format!("swing_{i:02}"),
                "start": p.start.theta,
                "goals": [{"link": g.link, "xyz": g.target.translation.as_slice()}],
                "payload": tool_payload(),
            })
        })
        .collect();
    write(dir, "payload.json", &json!({"robot": "payload_arm.json", "gravity": VERTICAL_GRAVITY, "problems": problems}))
}

#[test]
fn payload_suite_with_and_without_dynamics() {
    let dir = TempDir::new().unwrap();
    let s = payload_scenario(dir.path(), 20);
    let on = dir.path().join("on");
    let o = ks(&["plan", s.to_str().unwrap(), "-o", on.to_str().unwrap(), "--json"]);
    let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary, read_json(&on.join("summary.json")));
    assert_eq!(summary["problems"], 20);
    let ok = summary["dynamics_ok"].as_u64().unwrap();
    assert!(ok >= 19, "dynamics on: {ok}/20 within torque limits");
    assert_eq!(o.status.code(), Some(if summary["feasible"] == 20 { 0 } else { 1 }));
    assert_eq!(round_trip_all(&on), 2 * 20 + 2);

    let off = dir.path().join("off");
    let o = ks(&["plan", s.to_str().unwrap(), "-o", off.to_str().unwrap(), "--no-dynamics", "--json"]);
    assert_eq!(o.status.code(), Some(1));
    let summary = read_json(&off.join("summary.json"));
    let ok = summary["dynamics_ok"].as_u64().unwrap();
    assert!(ok <= 5, "dynamics off: {ok}/20 within torque limits");
    assert_eq!(summary["no_dynamics"], true);
    let m = read_json(&off.join("swing_00.json"));
    assert_eq!(m["enable_dynamics"], false);
    assert_eq!(m["dynamics_ok"], false);
    assert!(m["violations"].as_array().unwrap().iter().any(|v| v["constraint"] == "torque"));
    round_trip_all(&off);
}

#[test]
fn plan_outputs_are_complete_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let s = payload_scenario(dir.path(), 2);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ca = ks(&["plan", s.to_str().unwrap(), "-o", a.to_str().unwrap(), "--seeds", "2"]).status.code();
    let cb = ks(&["plan", s.to_str().unwrap(), "-o", b.to_str().unwrap(), "--seeds", "2"]).status.code();
    assert_eq!(ca, cb);
    let feasible = read_json(&a.join("summary.json"))["feasible"].as_u64().unwrap();
    assert_eq!(ca, Some(if feasible == 2 { 0 } else { 1 }));
    for name in ["swing_00", "swing_01"] {
        let csv_a = fs::read(a.join(format!("{name}.csv"))).unwrap();
        assert_eq!(csv_a, fs::read(b.join(format!("{name}.csv"))).unwrap());
        let mut ma = read_json(&a.join(format!("{name}.json")));
        let mut mb = read_json(&b.join(format!("{name}.json")));
        for k in ["feasible", "kinematic_ok", "dynamics_ok", "cost_breakdown", "solve_time", "energy", "seeds", "rng_seed"] {
            assert!(ma.get(k).is_some(), "metrics lack {k}");
        }
        assert_eq!(ma["seeds"], 2);
        assert!(ma["energy"].as_f64().unwrap() > 0.0);
        ma.as_object_mut().unwrap().remove("solve_time");
        mb.as_object_mut().unwrap().remove("solve_time");
        assert_eq!(ma, mb);

        // header t, q0 q1, qd0 qd1, qdd0 qdd1, tau0 tau1; anchored start at rest
        let (header, rows) = csv_rows(&a.join(format!("{name}.csv")));
        assert_eq!(header, ["t", "q0", "q1", "qd0", "qd1", "qdd0", "qdd1", "tau0", "tau1"]);
        let first: Vec<f64> = rows[0].iter().map(|x| x.parse().unwrap()).collect();
        assert_eq!(first[0], 0.0);
        assert!(first[3..7].iter().all(|v| v.abs() < 1e-9), "{first:?}");
        let last: Vec<f64> = rows.last().unwrap().iter().map(|x| x.parse().unwrap()).collect();
        assert!(last[3..7].iter().all(|v| v.abs() < 1e-9), "{last:?}");
    }
    let (header, rows) = csv_rows(&a.join("summary.csv"));
    assert_eq!(header, ["name", "feasible", "kinematic_ok", "dynamics_ok", "solve_time", "energy"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(round_trip_all(&a), 6);
}

#[test]
fn empty_problem_list_gives_an_empty_summary() {
    let dir = TempDir::new().unwrap();
    let s = write(dir.path(), "empty.json", &json!({"problems": []}));
    let out = dir.path().join("out");
    let o = ks(&["plan", s.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["problems"], 0);
    assert_eq!(summary["feasible"], 0);
    assert_eq!(summary["rows"], json!([]));
    round_trip_all(&out);
}

#[test]
fn unsolvable_goal_is_reported_not_fatal() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "arm.json", &payload_arm(PAYLOAD_TORQUE_LIMITS));
    let s = write(
        dir.path(),
        "far.json",
        &json!({"robot": "arm.json", "problems": [{"name": "far", "start": [0.0, 0.0], "goals": [{"link": "tool", "xyz": [3.0, 0.0, 0.0]}]}]}),
    );
    let out = dir.path().join("out");
    let o = ks(&["plan", s.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let m = read_json(&out.join("far.json"));
    assert_eq!(m["feasible"], false);
    assert!(m["error"].as_str().is_some());
    assert_eq!(read_json(&out.join("summary.json"))["errors"], 1);
    assert!(!out.join("far.csv").exists());
}

// ik

#[test]
fn ik_around_an_obstacle() {
    let dir = TempDir::new().unwrap();
    let bb = blocked_branch();
    write(dir.path(), "arm.json", &bb.robot);
    let Shape::Cuboid { pose, half_extents } = &bb.obstacle else { panic!("fixture obstacle is a cuboid") };
    let t = bb.target.translation;
    let s = write(
        dir.path(),
        "ik.json",
        &json!({
            "robot": "arm.json",
            "world": {"cuboids": [{"type": "cuboid", "xyz": pose.translation.as_slice(), "half_extents": half_extents.as_slice()}]},
            "esdf": {"lo": [-0.8, -0.8, -0.1], "hi": [0.8, 0.8, 0.1], "voxel_size": 0.01},
            "problems": [{"name": "reach", "goals": [{"link": "tool", "xyz": t.as_slice()}], "ik_seeds": 16, "rng_seed": 3}],
        }),
    );
    let out = dir.path().join("out");
    let o = ks(&["ik", s.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let m = read_json(&out.join("reach.json"));
    assert_eq!(m["feasible"], true);
    assert_eq!(m["rng_seed"], 3);
    let best = &m["best"];
    assert_eq!(best["scene_collision_free"], true);
    assert!(best["position_error"][0].as_f64().unwrap() < 1e-3);
    assert_eq!(round_trip_all(&out), 2);
}

// esdf-bench

fn sphere_bench_scenario(dir: &Path, name: &str, tsdf_voxel: f64) -> PathBuf {
    write(
        dir,
        name,
        &json!({
            "world": {"spheres": [{"type": "sphere", "center": [0.313, 0.297, 0.305], "radius": 0.17}]},
            "esdf": {
                "lo": [0.0, 0.0, 0.0], "hi": [0.6, 0.6, 0.6], "voxel_size": 0.02, "tsdf_voxel": tsdf_voxel,
                "probes": 20000, "probe_radius": 0.01, "probe_band": 0.03, "rng_seed": 7
            },
        }),
    )
}

fn analytic_recall(report: &Value, seeding: &str) -> f64 {
    let m = report["modes"].as_array().unwrap().iter().find(|m| m["seeding"] == seeding).unwrap();
    m["analytic"]["recall_value"].as_f64().unwrap()
}

#[test]
fn stamped_sphere_matches_the_exhaustive_transform() {
    let dir = TempDir::new().unwrap();
    let s = sphere_bench_scenario(dir.path(), "sphere.json", 0.01);
    let out = dir.path().join("out");
    let o = ks(&["esdf-bench", s.to_str().unwrap(), "-o", out.to_str().unwrap(), "--brute-force"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("bench.json"));
    assert_eq!(r["warmup"], 3);
    assert_eq!(r["repetitions"], 10);
    assert!(r["tsdf"]["allocated_blocks"].as_u64().unwrap() > 0);
    assert_eq!(r["tsdf"]["allocated_voxels"], r["tsdf"]["allocated_blocks"].as_u64().unwrap() * 512);
    for m in r["modes"].as_array().unwrap() {
        assert!(m["seeds"].as_u64().unwrap() > 0);
        let bf = &m["brute_force"];
        assert_eq!(bf["max_abs_diff_voxels"], 0.0);
        assert_eq!(bf["mismatched_cells"], 0);
        assert_eq!(bf["recall_value"], 1.0);
        assert!(bf["recall"]["colliding"].as_u64().unwrap() > 0);
        let t = &m["timings"]["total"];
        assert!(t["min_ms"].as_f64().unwrap() <= t["median_ms"].as_f64().unwrap());
    }
    let (header, rows) = csv_rows(&out.join("timings.csv"));
    assert_eq!(header, ["seeding", "stage", "median_ms", "min_ms", "max_ms"]);
    assert_eq!(rows.len(), 2 * 5);
    let (_, rows) = csv_rows(&out.join("recall.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(round_trip_all(&out), 3);
}

#[test]
fn seeding_recall_ordering_at_both_resolution_ratios() {
    let dir = TempDir::new().unwrap();
    let mut recall = Vec::new();
    for (ratio, vt) in [(1, 0.02), (4, 0.005)] {
        let s = sphere_bench_scenario(dir.path(), &format!("r{ratio}.json"), vt);
        let out = dir.path().join(format!("r{ratio}"));
        assert_eq!(ks(&["esdf-bench", s.to_str().unwrap(), "-o", out.to_str().unwrap()]).status.code(), Some(0));
        let r = read_json(&out.join("bench.json"));
        recall.push((analytic_recall(&r, "scatter"), analytic_recall(&r, "gather")));
    }
    assert!(recall[0].1 >= recall[0].0, "r=1: gather {} scatter {}", recall[0].1, recall[0].0);
    assert!(recall[1].0 >= recall[1].1, "r=4: scatter {} gather {}", recall[1].0, recall[1].1);
}

#[test]
fn single_seeding_mode_and_depth_frames() {
    let dir = TempDir::new().unwrap();
    let wall = Shape::cuboid([0.3, 0.3, 0.6], [0.4, 0.4, 0.05]);
    let cam = intrinsics(64, 48, 1.2);
    let pose = look_at(Vector3::new(0.3, 0.3, 0.1), Vector3::new(0.3, 0.3, 1.0), Vector3::y());
    let frame = render_depth(&cam, &pose, std::slice::from_ref(&wall));
    write(
        dir.path(),
        "frame.json",
        &json!({"width": 64, "height": 48, "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy, "pose": pose, "depth": frame.depth}),
    );
    let s = write(
        dir.path(),
        "depth.json",
        &json!({
            "world": {"depth_frames": ["frame.json"], "reference": [{"type": "cuboid", "xyz": [0.3, 0.3, 0.6], "half_extents": [0.4, 0.4, 0.05]}]},
            "esdf": {"lo": [0.1, 0.1, 0.3], "hi": [0.5, 0.5, 0.6], "voxel_size": 0.02, "probes": 500},
        }),
    );
    let out = dir.path().join("out");
    let o = ks(&["esdf-bench", s.to_str().unwrap(), "-o", out.to_str().unwrap(), "--seeding", "gather"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("bench.json"));
    assert_eq!(r["tsdf"]["depth_frames"], 1);
    let modes = r["modes"].as_array().unwrap();
    assert_eq!(modes.len(), 1);
    assert_eq!(modes[0]["seeding"], "gather");
    let a = &modes[0]["analytic"];
    assert_eq!(a["probes"], 500);
    assert!(a["recall_value"].as_f64().unwrap() >= 0.9, "{a}");
    round_trip_all(&out);
}

#[test]
fn empty_scene_reports_no_seeds() {
    let dir = TempDir::new().unwrap();
    let s = write(dir.path(), "empty.json", &json!({"esdf": {"lo": [0.0, 0.0, 0.0], "hi": [0.2, 0.2, 0.2], "voxel_size": 0.02}}));
    let out = dir.path().join("out");
    let o = ks(&["esdf-bench", s.to_str().unwrap(), "-o", out.to_str().unwrap(), "--brute-force"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("no surface sites"));
    let r = read_json(&out.join("bench.json"));
    for m in r["modes"].as_array().unwrap() {
        assert_eq!(m["no_seeds"], true);
        assert_eq!(m["analytic"], Value::Null);
        assert_eq!(m["brute_force"]["mismatched_cells"], 0);
    }
    assert!(!r["notes"].as_array().unwrap().is_empty());
    let (header, rows) = csv_rows(&out.join("recall.csv"));
    assert_eq!(header.len(), 6);
    // brute-force rows only, with nothing colliding
    assert!(rows.iter().all(|r| r[1] == "brute_force" && r[3] == "0"));
    round_trip_all(&out);

    // no esdf box at all is a missing input
    let s = write(dir.path(), "none.json", &json!({}));
    assert_eq!(ks(&["esdf-bench", s.to_str().unwrap(), "-o", out.to_str().unwrap()]).status.code(), Some(2));
}
