//! Named end-to-end scenarios and dataset generation.

use super::imu::{simulate_imu, ImuSimConfig};
use super::lidar::{simulate_sweep, LidarNoise, ScanPattern};
use super::scene::Scene;
use super::trajectory::{FigureEight, PathTrajectory, RoundedSquare, TimeWarp, Trajectory};
use crate::geometry::Pose;
use crate::imu::{ImuNoise, ImuSample};
use crate::scan::{Sweep, SWEEP_PERIOD};
use std::sync::Arc;

pub struct Scenario {
    pub name: String,
    pub scene: Scene,
    pub trajectory: Arc<dyn Trajectory>,
    pub duration: f64,
    pub pattern: ScanPattern,
    pub lidar_noise: LidarNoise,
    pub imu: ImuSimConfig,
}

/// Sweeps, IMU stream and ground-truth sensor poses at sweep end times.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub sweeps: Vec<Sweep>,
    pub imu: Vec<ImuSample>,
    pub truth: Vec<(f64, Pose)>,
}

pub const SCENARIOS: [&str; 5] = ["room", "room-noisy", "room-short", "loop", "loop-noisy"];

fn noisy_imu() -> ImuSimConfig {
    ImuSimConfig { noise: Some(ImuNoise::default()), ..Default::default() }
}

impl Scenario {
    /// 60 s figure-eight (peak speed below 2 m/s) in the default room.
    pub fn room_figure_eight(duration: f64, noisy: bool) -> Self {
        let mut tr = PathTrajectory::new(FigureEight { a: 7.5, b: 3.0, omega: 0.2 }, TimeWarp { hold: 2.0, ramp: 3.0 });
        tr.heave = (0.2, 0.7);
        tr.roll = (0.05, 0.9);
        tr.pitch = (0.04, 1.3);
        Self {
            name: if noisy { "room-noisy" } else { "room" }.into(),
            scene: Scene::default_room(),
            trajectory: Arc::new(tr),
            duration,
            pattern: ScanPattern::default(),
            lidar_noise: LidarNoise { range_sigma: if noisy { 0.01 } else { 0.0 } },
            imu: if noisy { noisy_imu() } else { ImuSimConfig::default() },
        }
    }

    /// One lap of a rounded 25 m square (≈ 97 m) in a ring corridor,
    /// stopping where it started.
    pub fn square_loop(noisy: bool) -> Self {
        let path = RoundedSquare { side: 25.0, radius: 2.0, speed: 1.5 };
        let warp = TimeWarp { hold: 2.0, ramp: 2.0 };
        let travel = path.perimeter() / path.speed;
        let mut tr = PathTrajectory::new(path, warp);
        tr.stop = Some(travel);
        // whole numbers of oscillation periods so the lap closes exactly
        let k = |n: f64| std::f64::consts::TAU * n / travel;
        tr.heave = (0.1, k(9.0));
        tr.roll = (0.03, k(13.0));
        tr.pitch = (0.03, k(7.0));
        let duration = ((warp.hold + travel + warp.ramp + 1.0) / SWEEP_PERIOD).ceil() * SWEEP_PERIOD;
        Self {
            name: if noisy { "loop-noisy" } else { "loop" }.into(),
            scene: Scene::ring_corridor(25.0, 4.0),
            trajectory: Arc::new(tr),
            duration,
            pattern: ScanPattern::default(),
            lidar_noise: LidarNoise { range_sigma: if noisy { 0.01 } else { 0.0 } },
            imu: if noisy { noisy_imu() } else { ImuSimConfig::default() },
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "room" => Self::room_figure_eight(60.0, false),
            "room-noisy" => Self::room_figure_eight(60.0, true),
            "room-short" => Self::room_figure_eight(10.0, false),
            "loop" => Self::square_loop(false),
            "loop-noisy" => Self::square_loop(true),
            _ => return None,
        })
    }

    pub fn sweep_count(&self) -> usize {
        (self.duration / SWEEP_PERIOD + 1e-9).floor() as usize
    }

    /// Deterministic for a given seed.
    pub fn generate(&self, seed: u64) -> SimData {
        let n = self.sweep_count();
        let sweeps: Vec<Sweep> = (0..n)
            .map(|k| {
                let start = k as f64 * SWEEP_PERIOD;
                simulate_sweep(&self.scene, self.trajectory.as_ref(), start, &self.pattern, &self.lidar_noise, seed)
            })
            .collect();
        let imu_cfg = ImuSimConfig { seed: self.imu.seed ^ seed, ..self.imu };
        let imu = simulate_imu(self.trajectory.as_ref(), 0.0, n as f64 * SWEEP_PERIOD + 0.02, &imu_cfg);
        let truth = sweeps.iter().map(|s| (s.end_time(), self.trajectory.pose(s.end_time()))).collect();
        SimData { sweeps, imu, truth }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_room_is_deterministic() {
        let mut s = Scenario::room_figure_eight(0.3, true);
        s.pattern.columns = 400;
        let a = s.generate(5);
        let b = s.generate(5);
        assert_eq!(a, b);
        assert_eq!(a.sweeps.len(), 3);
        assert!(a.imu.last().unwrap().t >= a.sweeps.last().unwrap().end_time());
        let c = s.generate(6);
        assert_ne!(a.imu, c.imu);
    }

    #[test]
    fn loop_returns_to_start() {
        let s = Scenario::square_loop(false);
        let p0 = s.trajectory.pose(0.0);
        let p1 = s.trajectory.pose(s.duration);
        assert!((p0.t - p1.t).norm() < 1e-9);
        assert!(p0.between(&p1).rotation_angle() < 1e-6);
        // the ring corridor never blocks the path
        for k in 0..400 {
            let t = s.duration * k as f64 / 400.0;
            assert!(s.scene.surface_distance(&s.trajectory.pose(t).t) > 0.5, "t={t}");
        }
    }

    #[test]
    fn room_path_clears_obstacles() {
        let s = Scenario::room_figure_eight(60.0, false);
        for k in 0..600 {
            let t = 0.1 * k as f64;
            let kin = s.trajectory.sample(t);
            assert!(s.scene.surface_distance(&kin.p) > 0.25, "t={t}");
            assert!(kin.v.norm() <= 2.0, "speed {} at {t}", kin.v.norm());
        }
    }
}
