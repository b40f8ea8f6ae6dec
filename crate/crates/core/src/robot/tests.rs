use super::*;
use crate::fixtures::{self, mimic_gripper_arm, pendulum, planar_arm};
use crate::kinematics::forward_kinematics_single;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn json(doc: &RobotDocument) -> String {
    serde_json::to_string(doc).unwrap()
}

#[test]
fn pendulum_has_one_dof() {
    let m = load_robot(&json(&pendulum(1.0, 0.5, 0.01))).unwrap();
    assert_eq!(m.dof(), 1);
    assert_eq!(m.cache().link_chain[1], vec![0, 1]);
    assert_eq!(m.links()[0].name, "base");
}

#[test]
fn dangling_parent_names_joint() {
    let mut doc = pendulum(1.0, 0.5, 0.01);
    doc.joints[0].parent = "ghost".into();
    let err = load_robot(&json(&doc)).unwrap_err();
    assert!(matches!(&err, ModelError::DanglingLink { joint, link } if joint == "j1" && link == "ghost"));
    assert!(err.to_string().contains("j1"));
}

#[test]
fn malformed_document_is_parse_error() {
    assert!(matches!(load_robot("{\"links\": 3}"), Err(ModelError::Parse(_))));
    assert!(matches!(load_robot("not json"), Err(ModelError::Parse(_))));
}

#[test]
fn gripper_driver_connects_two_links() {
    let m = fixtures::model(mimic_gripper_arm());
    assert_eq!(m.dof(), 4);
    let d = m.dof_names().iter().position(|n| *n == "finger_left_joint").unwrap();
    assert_eq!(m.cache().connected_links[d].len(), 2);
}

#[test]
fn cycle_is_rejected_and_named() {
    let mut doc = planar_arm(&[0.3, 0.3], &[1.0, 1.0], 0.05, 1);
    // close the loop base ← link2 while link1's parent becomes link2
    doc.joints[0].parent = "link2".into();
    let err = RobotModel::from_document(doc).unwrap_err();
    match err {
        ModelError::Cycle { joints } => {
            assert!(joints.contains(&"j1".to_string()) && joints.contains(&"j2".to_string()))
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn two_roots_rejected() {
    let mut doc = pendulum(1.0, 0.5, 0.01);
    doc.links.push(LinkDoc {
        name: "floating".into(),
        mass: 0.0,
        com: [0.0; 3],
        inertia: [0.0; 6],
        spheres: vec![],
    });
    assert!(matches!(RobotModel::from_document(doc), Err(ModelError::RootCount { .. })));
}

#[test]
fn duplicate_and_multiple_parent_rejected() {
    let mut doc = pendulum(1.0, 0.5, 0.01);
    doc.links.push(doc.links[1].clone());
    assert!(matches!(RobotModel::from_document(doc), Err(ModelError::Duplicate { .. })));

    let mut doc = planar_arm(&[0.3, 0.3], &[1.0, 1.0], 0.05, 1);
    doc.joints[1].child = "link1".into();
    assert!(matches!(RobotModel::from_document(doc), Err(ModelError::MultipleParents { .. })));
}

#[test]
fn mimic_validation() {
    let mut doc = mimic_gripper_arm();
    let n = doc.joints.len();
    // mimic of mimic
    doc.joints.push(JointDoc {
        name: "extra".into(),
        kind: JointKind::Revolute,
        parent: "finger_right".into(),
        child: "extra_link".into(),
        axis: Some([0.0, 0.0, 1.0]),
        origin: OriginDoc::default(),
        limits: LimitsDoc::default(),
        mimic: Some(MimicDoc {
            source: doc.joints[n - 1].name.clone(),
            multiplier: 1.0,
            offset: 0.0,
        }),
    });
    doc.links.push(LinkDoc {
        name: "extra_link".into(),
        mass: 0.0,
        com: [0.0; 3],
        inertia: [0.0; 6],
        spheres: vec![],
    });
    let err = RobotModel::from_document(doc.clone()).unwrap_err();
    assert!(matches!(&err, ModelError::InvalidMimic { joint, .. } if joint == "extra"));

    // fixed source
    doc.joints.last_mut().unwrap().mimic.as_mut().unwrap().source = "tool_joint".into();
    assert!(matches!(RobotModel::from_document(doc.clone()), Err(ModelError::InvalidMimic { .. })));

    // unknown source
    doc.joints.last_mut().unwrap().mimic.as_mut().unwrap().source = "nope".into();
    assert!(matches!(RobotModel::from_document(doc), Err(ModelError::InvalidMimic { .. })));
}

#[test]
fn joint_invariants() {
    let mut doc = pendulum(1.0, 0.5, 0.01);
    doc.joints[0].axis = Some([0.0, 0.0, 1.1]);
    assert!(matches!(RobotModel::from_document(doc), Err(ModelError::Invalid { .. })));

    let mut doc = pendulum(1.0, 0.5, 0.01);
    doc.joints[0].limits.position = Some([1.0, -1.0]);
    assert!(matches!(RobotModel::from_document(doc), Err(ModelError::EmptyInterval { .. })));

    let mut doc = pendulum(1.0, 0.5, 0.01);
    doc.joints[0].limits.torque = Some(LimitValue::Symmetric(-2.0));
    assert!(matches!(RobotModel::from_document(doc), Err(ModelError::EmptyInterval { .. })));

    let mut doc = pendulum(1.0, 0.5, 0.01);
    doc.joints[0].axis = None;
    assert!(RobotModel::from_document(doc).is_err());
}

#[test]
fn link_invariants() {
    let mut doc = pendulum(1.0, 0.5, 0.01);
    doc.links[1].mass = -1.0;
    assert!(RobotModel::from_document(doc).is_err());

    let mut doc = pendulum(1.0, 0.5, 0.01);
    doc.links[1].inertia = [1.0, 1.0, 1.0, 2.0, 0.0, 0.0];
    assert!(RobotModel::from_document(doc).is_err());

    let mut doc = pendulum(1.0, 0.5, 0.01);
    doc.links[1].spheres.push(SphereDoc { center: [0.0; 3], radius: 0.0 });
    assert!(RobotModel::from_document(doc).is_err());

    let mut doc = pendulum(1.0, 0.5, 0.01);
    doc.tool_links.push("nowhere".into());
    assert!(matches!(RobotModel::from_document(doc), Err(ModelError::UnknownLink(_))));

    let mut doc = pendulum(1.0, 0.5, 0.01);
    doc.configurations.insert("retract".into(), vec![0.0, 0.0]);
    assert!(RobotModel::from_document(doc).is_err());
}

#[test]
fn omitted_limits_are_unbounded() {
    let m = fixtures::model(pendulum(1.0, 0.5, 0.01));
    let l = m.dof_limits(0);
    assert_eq!(l.velocity, Interval::UNBOUNDED);
    assert_eq!(l.torque, Interval::UNBOUNDED);
}

#[test]
fn links_are_topologically_ordered() {
    let mut doc = planar_arm(&[0.3, 0.3, 0.3], &[1.0; 3], 0.05, 1);
    doc.links.reverse();
    let m = fixtures::model(doc);
    for l in 1..m.links().len() {
        assert!(m.parent_link(l).unwrap() < l);
    }
    assert_eq!(m.links()[0].name, "base");
}

fn raw_affects(doc: &RobotDocument, model: &RobotModel, dof: usize, link: &str) -> bool {
    // walk parents from `link` in the raw document
    let driver = model.dof_joint(dof).name.clone();
    let mut cur = link.to_string();
    loop {
        let Some(j) = doc.joints.iter().find(|j| j.child == cur) else {
            return false;
        };
        if j.kind != JointKind::Fixed
            && (j.name == driver || j.mimic.as_ref().is_some_and(|m| m.source == driver))
        {
            return true;
        }
        cur = j.parent.clone();
    }
}

fn check_cache(doc: &RobotDocument, m: &RobotModel) {
    let c = m.cache();
    for j in 0..m.dof() {
        for (e, link) in m.links().iter().enumerate() {
            assert_eq!(c.affects[j][e], raw_affects(doc, m, j, &link.name), "joint {j} link {}", link.name);
            let via_chain = c.connected_links[j].iter().any(|l| c.link_chain[e].contains(l));
            assert_eq!(c.affects[j][e], via_chain);
        }
    }
    let mut level_of = vec![usize::MAX; m.links().len()];
    for (lv, ls) in c.level_order.iter().enumerate() {
        for &l in ls {
            level_of[l] = lv;
        }
    }
    for l in 0..m.links().len() {
        if let Some(p) = m.parent_link(l) {
            assert!(level_of[p] < level_of[l]);
        }
    }
    let body = m.rigid_body_of_link();
    for &(a, b) in &c.self_collision_pairs {
        let (la, lb) = (m.sphere_links()[a], m.sphere_links()[b]);
        assert_ne!(la, lb);
        assert_ne!(body[la], body[lb]);
        assert_ne!(m.parent_link(la), Some(lb));
        assert_ne!(m.parent_link(lb), Some(la));
    }
}

#[test]
fn cache_matches_raw_tree_on_gripper() {
    let doc = mimic_gripper_arm();
    let m = fixtures::model(doc.clone());
    check_cache(&doc, &m);
}

#[test]
fn fixed_joint_merges_bodies_for_adjacency() {
    let m = fixtures::model(mimic_gripper_arm());
    let body = m.rigid_body_of_link();
    let l3 = m.link_index("link3").unwrap();
    let tool = m.link_index("tool").unwrap();
    assert_eq!(body[l3], body[tool]);
    // fingers hang off the tool, so link3 and the fingers are adjacent bodies
    let f = m.link_index("finger_left").unwrap();
    let s3: Vec<usize> = (0..m.sphere_count()).filter(|&s| m.sphere_links()[s] == l3).collect();
    let sf: Vec<usize> = (0..m.sphere_count()).filter(|&s| m.sphere_links()[s] == f).collect();
    for a in &s3 {
        for b in &sf {
            assert!(!m.cache().self_collision_pairs.contains(&(*a.min(b), *a.max(b))));
        }
    }
}

#[test]
fn round_trip_gripper() {
    let m = fixtures::model(mimic_gripper_arm());
    let back = load_robot(&m.to_json()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn zero_payload_is_identity() {
    let m = fixtures::model(planar_arm(&[0.3, 0.3], &[1.0, 2.0], 0.05, 1));
    let p = m.set_payload("link2", 0.0, Vector3::new(0.1, 0.2, 0.3), Matrix3::zeros()).unwrap();
    assert_eq!(p, m);
}

#[test]
fn coincident_point_mass_only_adds_mass() {
    let m = fixtures::model(planar_arm(&[0.3, 0.3], &[1.0, 2.0], 0.05, 1));
    let l = m.link_index("link2").unwrap();
    let before = m.links()[l].clone();
    let p = m.set_payload("link2", 3.0, before.com, Matrix3::zeros()).unwrap();
    let after = &p.links()[l];
    assert_eq!(after.mass, before.mass + 3.0);
    assert!((after.com - before.com).norm() < 1e-15);
    assert!((after.inertia - before.inertia).amax() < 1e-15);
    assert_eq!(p.cache(), m.cache());
}

#[test]
fn point_mass_payload_matches_brute_force() {
    let m = fixtures::model(planar_arm(&[0.3, 0.4], &[1.0, 2.0], 0.05, 1));
    let l = m.link_index("link2").unwrap();
    let base = m.links()[l].clone();
    let at = Vector3::new(0.4, 0.0, 0.0);
    let p = m.set_payload("link2", 3.0, at, Matrix3::zeros()).unwrap();
    // represent the original link by six point masses reproducing its inertia
    // about its com, then add the payload point and sum m·(|r|²I − rrᵀ)
    let eig = SymmetricEigen::new(base.inertia);
    let mut points = Vec::new();
    let tr = eig.eigenvalues.sum();
    for k in 0..3 {
        // principal moment I_k = Σ m(r² − r_k²); masses m/6 at ±a_k e_k
        let second = 0.5 * tr - eig.eigenvalues[k];
        let a = (second * 3.0 / base.mass).sqrt();
        let e = eig.eigenvectors.column(k).into_owned();
        points.push((base.mass / 6.0, base.com + a * e));
        points.push((base.mass / 6.0, base.com - a * e));
    }
    points.push((3.0, at));
    let total: f64 = points.iter().map(|(m, _)| m).sum();
    let com = points.iter().fold(Vector3::zeros(), |acc, (m, r)| acc + *m * r) / total;
    let mut inertia = Matrix3::zeros();
    for (m, r) in &points {
        let d = r - com;
        inertia += *m * (Matrix3::identity() * d.norm_squared() - d * d.transpose());
    }
    let after = &p.links()[l];
    assert!((after.mass - total).abs() < 1e-12);
    assert!((after.com - com).norm() < 1e-12);
    assert!((after.inertia - inertia).amax() < 1e-12);
}

#[test]
fn payload_errors() {
    let m = fixtures::model(pendulum(1.0, 0.5, 0.01));
    assert!(matches!(
        m.set_payload("nope", 1.0, Vector3::zeros(), Matrix3::zeros()),
        Err(ModelError::UnknownLink(_))
    ));
    assert!(m.set_payload("arm", -1.0, Vector3::zeros(), Matrix3::zeros()).is_err());
}

fn never_touching_arm() -> RobotModel {
    let mut doc = planar_arm(&[0.3, 0.2], &[1.0, 1.0], 0.04, 2);
    doc.links[0].spheres.push(SphereDoc { center: [0.0; 3], radius: 0.05 });
    doc.joints[1].limits.position = Some([-1.0, 1.0]);
    fixtures::model(doc)
}

fn pair_collides(m: &RobotModel, q: &[f64], (a, b): (usize, usize)) -> bool {
    let s = forward_kinematics_single(m, q, &crate::Pose::identity()).unwrap();
    (s.sphere_centers[a] - s.sphere_centers[b]).norm() < s.sphere_radii[a] + s.sphere_radii[b]
}

#[test]
fn short_arm_prunes_every_pair() {
    let m = never_touching_arm();
    assert!(!m.cache().self_collision_pairs.is_empty());
    // exhaustive grid over the joint box finds no contact for any candidate
    let lim = m.position_limits();
    for i in 0..=100 {
        for k in 0..=100 {
            let q = [
                lim[0].lo + (lim[0].hi - lim[0].lo) * i as f64 / 100.0,
                lim[1].lo + (lim[1].hi - lim[1].lo) * k as f64 / 100.0,
            ];
            for &p in &m.cache().self_collision_pairs {
                assert!(!pair_collides(&m, &q, p));
            }
        }
    }
    let pruned = build_self_collision_pairs(&m, 500, 0).unwrap();
    assert!(pruned.cache().self_collision_pairs.is_empty());
}

#[test]
fn adjacent_overlap_is_ignored() {
    // two links whose spheres overlap at the shared joint
    let m = fixtures::model(planar_arm(&[0.1, 0.1], &[1.0, 1.0], 0.08, 1));
    let pruned = build_self_collision_pairs(&m, 100, 3).unwrap();
    assert!(pruned.cache().self_collision_pairs.is_empty());
    assert!(m.cache().self_collision_pairs.is_empty());
}

fn folding_arm() -> RobotModel {
    fixtures::model(planar_arm(&[0.3, 0.3, 0.3], &[1.0; 3], 0.05, 3))
}

#[test]
fn folding_arm_keeps_a_link1_link3_pair() {
    let m = folding_arm();
    let pruned = build_self_collision_pairs(&m, 2000, 0).unwrap();
    let l1 = m.link_index("link1").unwrap();
    let l3 = m.link_index("link3").unwrap();
    let kept: Vec<(usize, usize)> = pruned
        .cache()
        .self_collision_pairs
        .iter()
        .copied()
        .filter(|&(a, b)| m.sphere_links()[a] == l1 && m.sphere_links()[b] == l3)
        .collect();
    assert!(!kept.is_empty());
    // brute-force grid confirms each retained pair can actually collide
    let n = 22;
    let lim = m.position_limits();
    let at = |iv: Interval, i: usize| iv.lo + (iv.hi - iv.lo) * i as f64 / (n - 1) as f64;
    for &p in &kept {
        let mut found = false;
        'grid: for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if pair_collides(&m, &[at(lim[0], a), at(lim[1], b), at(lim[2], c)], p) {
                        found = true;
                        break 'grid;
                    }
                }
            }
        }
        assert!(found, "pair {p:?} never collides on the grid");
    }
}

#[test]
fn pruning_is_deterministic_and_needs_retract() {
    let m = folding_arm();
    let a = build_self_collision_pairs(&m, 300, 7).unwrap();
    let b = build_self_collision_pairs(&m, 300, 7).unwrap();
    assert_eq!(a.cache().self_collision_pairs, b.cache().self_collision_pairs);

    let mut doc = planar_arm(&[0.3, 0.3, 0.3], &[1.0; 3], 0.05, 3);
    doc.configurations.clear();
    let m = fixtures::model(doc);
    assert!(matches!(build_self_collision_pairs(&m, 10, 0), Err(ModelError::MissingConfiguration(_))));
    let opts = PruningOptions { default_configuration: false, sampling: true };
    assert!(build_self_collision_pairs_with(&m, 10, 0, opts).is_ok());
    assert!(build_self_collision_pairs(&m, 0, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_trees_round_trip_and_cache(seed in any::<u64>(), n in 2usize..12, branches in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = fixtures::random_tree(&mut rng, n, branches, true);
        let m = RobotModel::from_document(doc.clone()).unwrap();
        check_cache(&doc, &m);
        let back = load_robot(&m.to_json()).unwrap();
        prop_assert_eq!(back, m);
    }
}
