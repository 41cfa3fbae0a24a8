//! Lissajous-style six-line scan pattern ray-cast against a [`Scene`].

use super::scene::Scene;
use super::trajectory::Trajectory;
use crate::geometry::Vec3;
use crate::scan::{ScanPoint, Sweep, LINES, MAX_RANGE, MIN_RANGE, SWEEP_PERIOD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

pub const HALF_FOV_AZIMUTH_DEG: f64 = 40.85;
pub const HALF_FOV_ELEVATION_DEG: f64 = 12.55;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPattern {
    pub columns: usize,
    /// Azimuth sweep amplitude (deg) and frequency (Hz).
    pub azimuth: (f64, f64),
    /// Elevation sweep amplitude of the line bundle (deg) and frequency (Hz).
    pub elevation: (f64, f64),
    /// Elevation spacing between adjacent lines (deg).
    pub line_spacing: f64,
}

impl Default for ScanPattern {
    fn default() -> Self {
        let spacing = 1.0;
        Self {
            columns: 4000,
            azimuth: (HALF_FOV_AZIMUTH_DEG, 61.3),
            elevation: (HALF_FOV_ELEVATION_DEG - 2.5 * spacing, 23.7),
            line_spacing: spacing,
        }
    }
}

impl ScanPattern {
    pub fn column_dt(&self) -> f64 {
        SWEEP_PERIOD / self.columns as f64
    }

    /// Unit ray directions of one column at absolute time `t`. Incommensurate
    /// frequencies make the pattern non-repetitive across sweeps.
    pub fn directions(&self, t: f64) -> [Vec3; LINES] {
        let tau = std::f64::consts::TAU;
        let az = (self.azimuth.0 * (tau * self.azimuth.1 * t).sin()).to_radians();
        let el0 = self.elevation.0 * (tau * self.elevation.1 * t + 0.7).sin();
        std::array::from_fn(|l| {
            let el = (el0 + (l as f64 - 2.5) * self.line_spacing).to_radians();
            Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarNoise {
    /// Range noise standard deviation (m).
    pub range_sigma: f64,
}

impl Default for LidarNoise {
    fn default() -> Self {
        Self { range_sigma: 0.0 }
    }
}

/// One sweep starting at `start`, each ray cast from the true pose at its
/// own timestamp. Points are expressed in the sensor frame at that time.
pub fn simulate_sweep<T: Trajectory + ?Sized>(
    scene: &Scene,
    traj: &T,
    start: f64,
    pattern: &ScanPattern,
    noise: &LidarNoise,
    seed: u64,
) -> Sweep {
    let dt = pattern.column_dt();
    let n = pattern.columns;
    let mut points: Vec<ScanPoint> = (0..n)
        .into_par_iter()
        .flat_map_iter(|c| {
            let t = start + c as f64 * dt;
            let pose = traj.pose(t);
            let rot = pose.rotation();
            let dirs = pattern.directions(t);
            let rel = (c as f64 * dt) as f32;
            (0..LINES).map(move |l| {
                let d = dirs[l];
                let mut pt = ScanPoint { p: [0.0; 3], reflectance: 0.0, timestamp: rel, line: l as u8, valid: false };
                if let Some(hit) = scene.raycast(&pose.t, &(rot * d)) {
                    if (MIN_RANGE..=MAX_RANGE).contains(&hit.range) {
                        pt.set_position(&(d * hit.range));
                        pt.reflectance = hit.reflectance;
                        pt.valid = true;
                    }
                }
                pt
            })
        })
        .collect();
    if noise.range_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ start.to_bits());
        let normal = Normal::new(0.0, noise.range_sigma).expect("finite sigma");
        for pt in points.iter_mut() {
            let e: f64 = normal.sample(&mut rng);
            if pt.valid {
                let p = pt.position();
                let r = p.norm();
                pt.set_position(&(p * ((r + e) / r)));
            }
        }
    }
    Sweep { points, columns: n, start_time: start }
}
