//! IMU measurement model driven by an analytic trajectory.

use super::trajectory::Trajectory;
use crate::geometry::Vec3;
use crate::imu::{gravity_vector, ImuNoise, ImuSample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSimConfig {
    pub rate: f64,
    pub gravity: f64,
    pub bias_acc: Vec3,
    pub bias_gyro: Vec3,
    /// `None` disables white noise and bias random walk.
    pub noise: Option<ImuNoise>,
    pub seed: u64,
}

impl Default for ImuSimConfig {
    fn default() -> Self {
        Self {
            rate: 200.0,
            gravity: crate::imu::DEFAULT_GRAVITY,
            bias_acc: Vec3::zeros(),
            bias_gyro: Vec3::zeros(),
            noise: None,
            seed: 0,
        }
    }
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::from_fn(|_, _| StandardNormal.sample(rng))
}

/// Samples at `k / rate` for every k with `t0 ≤ k/rate ≤ t1`.
/// `a_m = Rᵀ(a + g) + b_a + n_a`, `ω_m = ω + b_g + n_g`, with `g = (0, 0, +g)`.
pub fn simulate_imu<T: Trajectory + ?Sized>(traj: &T, t0: f64, t1: f64, cfg: &ImuSimConfig) -> Vec<ImuSample> {
    assert!(t0 < t1, "empty time range");
    let g = gravity_vector(cfg.gravity);
    let dt = 1.0 / cfg.rate;
    let k0 = (t0 * cfg.rate - 1e-9).ceil() as i64;
    let k1 = (t1 * cfg.rate + 1e-9).floor() as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ba = cfg.bias_acc;
    let mut bg = cfg.bias_gyro;
    (k0..=k1)
        .map(|k| {
            let t = k as f64 * dt;
            let s = traj.sample(t);
            let r = s.q.to_rotation_matrix();
            let mut acc = r.transpose() * (s.a + g) + ba;
            let mut gyro = s.omega + bg;
            if let Some(n) = cfg.noise {
                let sq = cfg.rate.sqrt();
                acc += gaussian3(&mut rng) * (n.acc * sq);
                gyro += gaussian3(&mut rng) * (n.gyro * sq);
                ba += gaussian3(&mut rng) * (n.acc_walk / sq);
                bg += gaussian3(&mut rng) * (n.gyro_walk / sq);
            }
            ImuSample { t, acc, gyro }
        })
        .collect()
}
