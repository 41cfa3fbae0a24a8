use super::*;
use crate::geometry::{exp_so3, Quat};
use crate::scan::FeatureKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_2;

fn yaw(a: f64) -> Quat {
    Quat::from_axis_angle(&Vec3::z_axis(), a)
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<Vec3> {
    (0..n).map(|_| Vec3::from_fn(|_, _| rng.random_range(-half..half))).collect()
}

#[test]
fn icp_recovers_known_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let src = random_cloud(&mut rng, 400, 5.0);
    let truth = Pose::new(Vec3::new(0.2, -0.15, 0.1), exp_so3(&Vec3::new(0.02, -0.03, 0.04)));
    let dst: Vec<Vec3> = src.iter().map(|p| truth.transform_point(p)).collect();
    let fit = icp_align(&src, &dst, &Pose::identity(), &IcpParams::default()).unwrap();
    assert!((fit.pose.t - truth.t).norm() < 1e-6);
    assert!(fit.pose.q.angle_to(&truth.q) < 1e-6);
    assert!(fit.fitness < 1e-12);
    assert_eq!(fit.inlier_ratio, 1.0);
}

#[test]
fn icp_on_identical_clouds_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let src = random_cloud(&mut rng, 100, 3.0);
    let fit = icp_align(&src, &src, &Pose::identity(), &IcpParams::default()).unwrap();
    assert!(fit.pose.t.norm() < 1e-12 && fit.pose.rotation_angle() < 1e-12);
    assert!(fit.fitness.abs() < 1e-20);
}

#[test]
fn icp_gates_disjoint_and_tiny_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let src = random_cloud(&mut rng, 100, 3.0);
    let far: Vec<Vec3> = src.iter().map(|p| p + Vec3::new(100.0, 0.0, 0.0)).collect();
    assert!(matches!(icp_align(&src, &far, &Pose::identity(), &IcpParams::default()), Err(LoopError::IcpDiverged(_))));
    assert!(matches!(icp_align(&src[..5], &src, &Pose::identity(), &IcpParams::default()), Err(LoopError::TooFewPoints { .. })));
}

/// Poses every `step` m around a square starting at the origin heading +x,
/// turning left at the corners; the last pose coincides with the first.
fn square(side: f64, per_side: usize) -> Vec<Pose> {
    let step = side / per_side as f64;
    let mut out = Vec::new();
    let mut p = Pose::identity();
    for s in 0..4 {
        for k in 0..per_side {
            out.push(p);
            p.t += p.q * Vec3::new(step, 0.0, 0.0);
            if k + 1 == per_side {
                p.q = yaw(FRAC_PI_2 * (s + 1) as f64);
            }
        }
    }
    out.push(Pose::new(Vec3::zeros(), yaw(0.0)));
    out
}

/// Odometry that accumulates `drift` rad of extra yaw per increment.
fn drifted(truth: &[Pose], drift: f64) -> Vec<Pose> {
    let mut out = vec![truth[0]];
    for w in truth.windows(2) {
        let rel = w[0].between(&w[1]);
        let last = *out.last().unwrap();
        out.push(last.compose(&Pose::new(rel.t, yaw(drift) * rel.q)));
    }
    out
}

fn graph_from(odom: &[Pose], keyframe: impl Fn(usize) -> bool) -> PoseGraph {
    let mut g = PoseGraph::new(0.05, 0.5f64.to_radians());
    for (i, p) in odom.iter().enumerate() {
        g.add_frame(i as u64, i as f64 * 0.1, *p, keyframe(i));
    }
    g
}

fn exact_loop(g: &PoseGraph, from: usize, to: usize, relative: Pose) -> LoopCandidate {
    LoopCandidate {
        query: g.node(to).id,
        candidate: g.node(from).id,
        query_index: to,
        candidate_index: from,
        init: g.node(to).pose,
        relative,
        fitness: MIN_FITNESS,
        inlier_ratio: 1.0,
    }
}

#[test]
fn consistent_graph_is_unchanged() {
    let truth = square(20.0, 10);
    let mut g = graph_from(&truth, |_| true);
    let n = truth.len() - 1;
    g.add_loop(&exact_loop(&g, 0, n, truth[0].between(&truth[n])));
    let before: Vec<Pose> = g.nodes().iter().map(|n| n.pose).collect();
    assert!(g.cost() < 1e-20);
    optimize_pose_graph(&mut g).unwrap();
    for (a, b) in before.iter().zip(g.nodes()) {
        assert!((a.t - b.pose.t).norm() < 1e-9);
        assert!(a.q.angle_to(&b.pose.q) < 1e-9);
    }
}

#[test]
fn square_loop_with_yaw_drift_is_closed() {
    let truth = square(25.0, 25);
    // one degree of yaw drift per side, spread over its increments
    let odom = drifted(&truth, 1f64.to_radians() / 25.0);
    let mut g = graph_from(&odom, |i| i % 3 == 0);
    let last = truth.len() - 1;
    let e2e = |g: &PoseGraph| (g.node(last).pose.t - g.node(0).pose.t).norm();
    let before = e2e(&g);
    assert!(before > 1.0, "drift too small to be meaningful: {before}");
    let anchor = g.node(0).pose;
    let cost0 = g.cost();
    g.add_loop(&exact_loop(&g, 0, last, Pose::identity()));
    let rep = optimize_pose_graph(&mut g).unwrap();
    assert!(rep.final_cost <= rep.initial_cost);
    assert!(g.cost() <= cost0 + rep.initial_cost);
    let after = e2e(&g);
    assert!(after < 0.05 * before, "before {before}, after {after}");
    assert_eq!(g.node(0).pose, anchor);
    assert!(rep.cost_history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn two_loops_are_both_closed() {
    // first square to the left, second mirrored to the right; both return home
    let a = square(15.0, 15);
    let mirror = |p: &Pose| Pose::new(Vec3::new(p.t.x, -p.t.y, p.t.z), Quat::from_axis_angle(&Vec3::z_axis(), -log_q(&p.q)));
    let mut truth = a.clone();
    truth.extend(a.iter().skip(1).map(mirror));
    let odom = drifted(&truth, 0.002);
    let mut g = graph_from(&odom, |_| true);
    let mid = a.len() - 1;
    let end = truth.len() - 1;
    g.add_loop(&exact_loop(&g, 0, mid, Pose::identity()));
    g.add_loop(&exact_loop(&g, mid, end, Pose::identity()));
    let loops: Vec<GraphEdge> = g.edges().iter().filter(|e| e.kind == EdgeKind::Loop).copied().collect();
    let before: Vec<f64> = loops.iter().map(|e| g.edge_error(e).norm()).collect();
    optimize_pose_graph(&mut g).unwrap();
    for (e, b) in loops.iter().zip(before) {
        let after = g.edge_error(e).norm();
        assert!(after < b, "loop edge {}→{}: {b} → {after}", e.from, e.to);
    }
}

fn log_q(q: &Quat) -> f64 {
    crate::geometry::log_so3(q).z
}

#[test]
fn residuals_are_gauge_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = square(10.0, 5);
    let odom = drifted(&truth, 0.01);
    let mut g = graph_from(&odom, |_| true);
    // perturb so residuals are non-trivial
    for i in 1..g.nodes().len() {
        let p = g.node(i).pose;
        let d = Tangent6::from_fn(|_, _| rng.random_range(-0.1..0.1));
        g.set_pose(i, p.boxplus(&d));
    }
    let gauge = Pose::new(Vec3::new(3.0, -7.0, 1.0), exp_so3(&Vec3::new(0.3, -0.2, 1.1)));
    let mut h = g.clone();
    for i in 0..h.nodes().len() {
        let p = h.node(i).pose;
        h.set_pose(i, gauge.compose(&p));
    }
    for (e, f) in g.edges().iter().zip(h.edges()) {
        assert!((g.edge_error(e) - h.edge_error(f)).amax() < 1e-10);
    }
}

fn plane_cloud(points: &[Vec3]) -> FeatureCloud {
    let planes = points
        .iter()
        .map(|p| FeaturePoint { p: *p, kind: FeatureKind::Plane, nu: Vec3::z(), reflectance: 0.5, timestamp: 0.0 })
        .collect();
    FeatureCloud { edges: Vec::new(), planes }
}

/// Sensor-frame crops of a static world around each pose.
fn observe(world: &[Vec3], poses: &[Pose], radius: f64) -> Vec<FeatureCloud> {
    poses
        .iter()
        .map(|p| {
            let local: Vec<Vec3> =
                world.iter().filter(|w| (*w - p.t).norm() < radius).map(|w| p.inverse_transform_point(w)).collect();
            plane_cloud(&local)
        })
        .collect()
}

fn world(rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    (0..20000)
        .map(|_| Vec3::new(rng.random_range(-10.0..30.0), rng.random_range(-10.0..30.0), rng.random_range(-2.0..3.0)))
        .collect()
}

fn clouds_by_id(g: &PoseGraph, clouds: Vec<FeatureCloud>) -> HashMap<u64, FeatureCloud> {
    g.nodes().iter().map(|n| n.id).zip(clouds).collect()
}

#[test]
fn loop_is_detected_on_revisit() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = world(&mut rng);
    let truth = square(20.0, 20);
    let odom = drifted(&truth, 0.0006);
    let g = graph_from(&odom, |_| true);
    let clouds = clouds_by_id(&g, observe(&w, &truth, 10.0));
    let last = truth.len() - 1;
    assert!((g.node(last).pose.t - g.node(0).pose.t).norm() > 0.2);
    let c = detect_loop(&g, last, &clouds, &LoopParams::default()).expect("loop expected");
    assert!(last - c.candidate_index >= 20);
    let expected = truth[c.candidate_index].between(&truth[last]);
    let err = expected.between(&c.relative);
    assert!(err.t.norm() < 0.05, "translation error {}", err.t.norm());
    assert!(err.rotation_angle() < 0.5f64.to_radians());
    assert!(c.fitness < 0.3 && c.inlier_ratio > 0.5);
}

#[test]
fn no_loop_without_revisit() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = world(&mut rng);
    let truth: Vec<Pose> = (0..40).map(|i| Pose::new(Vec3::new(i as f64 * 0.5 - 8.0, 0.0, 0.0), Quat::identity())).collect();
    let g = graph_from(&truth, |_| true);
    let clouds = clouds_by_id(&g, observe(&w, &truth, 10.0));
    for q in 0..truth.len() {
        assert!(detect_loop(&g, q, &clouds, &LoopParams::default()).is_none());
    }
}

#[test]
fn temporal_gate_rejects_short_revisit() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = world(&mut rng);
    // out 7 m and straight back, home again after 15 keyframes
    let truth: Vec<Pose> = (0..=15)
        .map(|i| {
            if i <= 7 {
                Pose::new(Vec3::new(i as f64, 0.0, 0.0), Quat::identity())
            } else {
                Pose::new(Vec3::new(7.0 - (i - 7) as f64 * 7.0 / 8.0, 0.0, 0.0), yaw(std::f64::consts::PI))
            }
        })
        .collect();
    let g = graph_from(&truth, |_| true);
    let clouds = clouds_by_id(&g, observe(&w, &truth, 10.0));
    assert!((truth[15].t - truth[0].t).norm() < 1e-12);
    assert!(detect_loop(&g, 15, &clouds, &LoopParams::default()).is_none());
    // the same revisit passes once the gates are lowered
    let relaxed = LoopParams { min_keyframe_gap: 10, min_travel: 0.0, ..Default::default() };
    let c = detect_loop(&g, 15, &clouds, &relaxed).expect("relaxed gate admits the revisit");
    assert!(15 - c.candidate_index >= 10);
}

#[test]
fn export_single_keyframe_is_verbatim() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts = random_cloud(&mut rng, 50, 4.0);
    let mut g = PoseGraph::new(0.05, 0.01);
    g.add_frame(7, 0.0, Pose::identity(), true);
    let clouds = HashMap::from([(7u64, plane_cloud(&pts))]);
    let map = export_global_map(&g, &clouds, 0.0);
    assert_eq!(map, plane_cloud(&pts).planes);
    // regular frames contribute nothing; keyframes are placed at their poses
    let p = Pose::new(Vec3::new(1.0, 2.0, 3.0), yaw(0.5));
    g.add_frame(8, 0.1, p, false);
    g.add_frame(9, 0.2, p, true);
    let clouds = HashMap::from([(7u64, plane_cloud(&pts[..1])), (8, plane_cloud(&pts)), (9, plane_cloud(&pts[..1]))]);
    let map = export_global_map(&g, &clouds, 0.0);
    assert_eq!(map.len(), 2);
    assert!((map[1].p - p.transform_point(&pts[0])).norm() < 1e-12);
}
