use super::*;
use crate::eval::ape;
use crate::sim::Scenario;

fn truth_record(truth: &[(f64, Pose)]) -> TrajectoryRecord {
    TrajectoryRecord::new(truth.iter().map(|&(time, pose)| StampedPose { time, pose }).collect()).unwrap()
}

#[test]
fn empty_scans_are_rejected() {
    let data = Scenario::by_name("room-short").unwrap().generate(0);
    let err = run_pipeline(&PipelineConfig::default(), &[], &data.imu).unwrap_err();
    assert!(matches!(err, PipelineError::InputFormat(_)), "{err}");
}

#[test]
fn short_imu_reports_uncovered_interval() {
    let mut s = Scenario::by_name("room-short").unwrap();
    s.duration = 1.0;
    let data = s.generate(0);
    let imu: Vec<_> = data.imu.iter().copied().filter(|m| m.t <= 0.5).collect();
    let end = imu.last().unwrap().t;
    match run_pipeline(&PipelineConfig::default(), &data.sweeps, &imu) {
        Err(PipelineError::InputFormat(msg)) => assert!(msg.contains(&format!("[{end}, 1]")), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn static_init_recovers_attitude_and_gyro_bias() {
    let q = Quat::from_euler_angles(0.1, -0.05, 0.7);
    let bias = Vec3::new(0.002, -0.001, 0.003);
    let imu: Vec<ImuSample> = (0..200)
        .map(|k| ImuSample { t: k as f64 * 0.005, acc: q.inverse() * Vec3::new(0.0, 0.0, 9.81), gyro: bias })
        .collect();
    let init = static_initialization(&imu, 0.0, 1.0, 9.81);
    assert!(init.stationary);
    assert!((init.gyro_bias - bias).norm() < 1e-12);
    // gravity-aligned up to yaw
    let up = init.orientation * (q.inverse() * Vec3::z());
    assert!((up - Vec3::z()).norm() < 1e-9);
}

#[test]
fn drift_injector_rotates_increments() {
    let mut d = DriftInjector::new(0.01);
    let step = Pose::new(Vec3::new(1.0, 0.0, 0.0), Quat::identity());
    let mut raw = Pose::identity();
    let mut out = d.apply(raw);
    for _ in 0..10 {
        raw = raw.compose(&step);
        out = d.apply(raw);
    }
    assert!((crate::geometry::yaw_of(&out.q) - 0.1).abs() < 1e-9);
    assert!((out.t.norm() - 10.0).abs() < 0.1);
}

#[test]
fn tracking_lost_keeps_partial_output() {
    let mut s = Scenario::by_name("room-short").unwrap();
    s.duration = 1.5;
    let mut data = s.generate(0);
    // blank out the sweeps after the first five: nothing to register against
    for w in data.sweeps.iter_mut().skip(5) {
        for p in w.points.iter_mut() {
            p.valid = false;
        }
    }
    match run_pipeline(&PipelineConfig::default(), &data.sweeps, &data.imu) {
        Err(PipelineError::TrackingLost { frame, partial }) => {
            assert_eq!(frame, 8);
            assert!(partial.trajectory.len() >= 5);
            assert_eq!(partial.report.tracking_lost, Some(8));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn short_room_run_is_accurate_and_deterministic() {
    let data = Scenario::by_name("room-short").unwrap().generate(3);
    let config = PipelineConfig::default();
    let t = std::time::Instant::now();
    let a = run_pipeline(&config, &data.sweeps, &data.imu).unwrap();
    eprintln!("runtime {:?}", t.elapsed());
    let b = run_pipeline(&config, &data.sweeps, &data.imu).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trajectory.len(), data.sweeps.len());
    let e = ape(&a.trajectory, &truth_record(&data.truth)).unwrap();
    eprintln!("ape {:.4} max {:.4} report {:?}", e.rmse, e.max, a.report);
    assert!(e.rmse < 0.02, "{}", e.rmse);
    assert!(!a.map.is_empty());
}
