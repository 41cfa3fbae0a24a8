//! Analytic trajectories with closed-form velocity, acceleration and body rate.

use crate::geometry::{exp_so3, Pose, Quat, Vec3};
use nalgebra::UnitQuaternion;
use std::f64::consts::PI;

/// Ground-truth kinematics at one instant (world frame unless noted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    pub q: Quat,
    /// Angular rate in the body frame.
    pub omega: Vec3,
}

impl Kinematics {
    pub fn pose(&self) -> Pose {
        Pose::new(self.p, self.q)
    }
}

pub trait Trajectory: Send + Sync {
    fn sample(&self, t: f64) -> Kinematics;

    fn pose(&self, t: f64) -> Pose {
        self.sample(t).pose()
    }
}

/// Fixed pose.
#[derive(Debug, Clone, Copy)]
pub struct Stationary(pub Pose);

impl Trajectory for Stationary {
    fn sample(&self, _t: f64) -> Kinematics {
        Kinematics { p: self.0.t, v: Vec3::zeros(), a: Vec3::zeros(), q: self.0.q, omega: Vec3::zeros() }
    }
}

/// Constant world acceleration and constant body rate from an initial state.
#[derive(Debug, Clone, Copy)]
pub struct ConstantMotion {
    pub start: Pose,
    pub v0: Vec3,
    pub accel: Vec3,
    pub omega: Vec3,
}

impl Trajectory for ConstantMotion {
    fn sample(&self, t: f64) -> Kinematics {
        let p = self.start.t + self.v0 * t + 0.5 * self.accel * t * t;
        let q = self.start.q * exp_so3(&(self.omega * t));
        Kinematics { p, v: self.v0 + self.accel * t, a: self.accel, q, omega: self.omega }
    }
}

/// Euler angles (roll, pitch, yaw; R = Rz·Ry·Rx) with first derivatives
/// mapped to the body rate.
fn euler_kinematics(rpy: Vec3, rates: Vec3) -> (Quat, Vec3) {
    let (phi, theta, psi) = (rpy.x, rpy.y, rpy.z);
    let q = UnitQuaternion::from_euler_angles(phi, theta, psi);
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let omega = Vec3::new(
        rates.x - rates.z * st,
        rates.y * cp + rates.z * ct * sp,
        -rates.y * sp + rates.z * ct * cp,
    );
    (crate::geometry::canonicalize(q), omega)
}

/// Start-up time warp: still for `hold`, then a cosine speed ramp over
/// `ramp` seconds up to unit rate. Returns (s, ṡ, s̈).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWarp {
    pub hold: f64,
    pub ramp: f64,
}

impl TimeWarp {
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let tau = t - self.hold;
        if tau <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        if tau < self.ramp {
            let w = PI / self.ramp;
            let s = 0.5 * (tau - (w * tau).sin() / w);
            let sd = 0.5 * (1.0 - (w * tau).cos());
            let sdd = 0.5 * w * (w * tau).sin();
            return (s, sd, sdd);
        }
        (0.5 * self.ramp + (tau - self.ramp), 1.0, 0.0)
    }
}

/// Planar path with derivatives in its own parameter.
pub trait PlanarPath: Send + Sync {
    /// (P, P', P'') in the xy-plane.
    fn eval(&self, s: f64) -> ([f64; 2], [f64; 2], [f64; 2]);
}

/// x = a·sin(ωs), y = b·sin(2ωs).
#[derive(Debug, Clone, Copy)]
pub struct FigureEight {
    pub a: f64,
    pub b: f64,
    pub omega: f64,
}

impl PlanarPath for FigureEight {
    fn eval(&self, s: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let w = self.omega;
        let (s1, c1) = (w * s).sin_cos();
        let (s2, c2) = (2.0 * w * s).sin_cos();
        (
            [self.a * s1, self.b * s2],
            [self.a * w * c1, 2.0 * self.b * w * c2],
            [-self.a * w * w * s1, -4.0 * self.b * w * w * s2],
        )
    }
}

/// Rounded square traversed counter-clockwise at constant `speed`,
/// starting at the middle of the south side `(0, 0)` heading +x.
/// Straight runs alternate with quarter circles of radius `radius`.
#[derive(Debug, Clone, Copy)]
pub struct RoundedSquare {
    pub side: f64,
    pub radius: f64,
    pub speed: f64,
}

impl RoundedSquare {
    pub fn perimeter(&self) -> f64 {
        4.0 * (self.side - 2.0 * self.radius) + 2.0 * PI * self.radius
    }
}

impl PlanarPath for RoundedSquare {
    fn eval(&self, s: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let v = self.speed;
        let r = self.radius;
        let straight = self.side - 2.0 * r;
        let arc = 0.5 * PI * r;
        let leg = straight + arc;
        let per = self.perimeter();
        // arc length, starting half way along the first straight
        let l = (s * v + 0.5 * straight).rem_euclid(per);
        let k = (l / leg).floor().min(3.0) as usize;
        let m = l - k as f64 * leg;
        let h = self.side / 2.0;
        // leg k: straight along heading k·90°, then a left turn
        let heading = k as f64 * 0.5 * PI;
        let (dir, left) = ([heading.cos(), heading.sin()], [-heading.sin(), heading.cos()]);
        // straight start point of leg k (local frame centered at (0, h))
        let corner_start = match k {
            0 => [-h + r, -h],
            1 => [h, -h + r],
            2 => [h - r, h],
            _ => [-h, h - r],
        };
        let (p, d1, d2) = if m < straight {
            ([corner_start[0] + dir[0] * m, corner_start[1] + dir[1] * m], [dir[0] * v, dir[1] * v], [0.0, 0.0])
        } else {
            let phi = (m - straight) / r;
            let c = [corner_start[0] + dir[0] * straight + left[0] * r, corner_start[1] + dir[1] * straight + left[1] * r];
            let ang = heading - 0.5 * PI + phi;
            let (sa, ca) = ang.sin_cos();
            let w = v / r;
            ([c[0] + r * ca, c[1] + r * sa], [-r * sa * w, r * ca * w], [-r * ca * w * w, -r * sa * w * w])
        };
        ([p[0], p[1] + h], d1, d2)
    }
}

/// Planar path lifted to 6-DoF: heading follows the tangent, plus small
/// roll/pitch/heave oscillations in the path parameter.
pub struct PathTrajectory<P: PlanarPath> {
    pub path: P,
    pub warp: TimeWarp,
    pub z0: f64,
    pub heave: (f64, f64),
    pub roll: (f64, f64),
    pub pitch: (f64, f64),
    /// End of motion: the path parameter is clamped here (with a cosine ramp-down of `warp.ramp`).
    pub stop: Option<f64>,
}

impl<P: PlanarPath> PathTrajectory<P> {
    pub fn new(path: P, warp: TimeWarp) -> Self {
        Self { path, warp, z0: 0.0, heave: (0.0, 0.0), roll: (0.0, 0.0), pitch: (0.0, 0.0), stop: None }
    }

    fn param(&self, t: f64) -> (f64, f64, f64) {
        let (s, sd, sdd) = self.warp.eval(t);
        let Some(end) = self.stop else {
            return (s, sd, sdd);
        };
        // mirrored ramp-down so the path parameter reaches `end` with zero rate
        let ramp_len = 0.5 * self.warp.ramp;
        let decel_start = end - ramp_len;
        if s <= decel_start {
            return (s, sd, sdd);
        }
        let t_dec = self.warp.hold + self.warp.ramp + (decel_start - ramp_len);
        let tau = t - t_dec;
        if tau >= self.warp.ramp {
            return (end, 0.0, 0.0);
        }
        let w = PI / self.warp.ramp;
        let s = decel_start + 0.5 * (tau + (w * tau).sin() / w);
        let sd = 0.5 * (1.0 + (w * tau).cos());
        let sdd = -0.5 * w * (w * tau).sin();
        (s, sd, sdd)
    }
}

impl<P: PlanarPath> Trajectory for PathTrajectory<P> {
    fn sample(&self, t: f64) -> Kinematics {
        let (s, sd, sdd) = self.param(t);
        let (p, d1, d2) = self.path.eval(s);
        let osc = |(amp, k): (f64, f64)| ((amp * (k * s).sin()), amp * k * (k * s).cos(), -amp * k * k * (k * s).sin());
        let (hz, hz1, hz2) = osc(self.heave);
        let (r, r1, _) = osc(self.roll);
        let (pt, p1, _) = osc(self.pitch);
        let pos = Vec3::new(p[0], p[1], self.z0 + hz);
        let dp = Vec3::new(d1[0], d1[1], hz1);
        let ddp = Vec3::new(d2[0], d2[1], hz2);
        let v = dp * sd;
        let a = ddp * sd * sd + dp * sdd;
        let yaw = d1[1].atan2(d1[0]);
        let yaw1 = (d1[0] * d2[1] - d1[1] * d2[0]) / (d1[0] * d1[0] + d1[1] * d1[1]);
        let (q, omega) = euler_kinematics(Vec3::new(r, pt, yaw), Vec3::new(r1, p1, yaw1) * sd);
        Kinematics { p: pos, v, a, q, omega }
    }
}

/// One sinusoid term `amp·sin(freq·t + phase)`.
#[derive(Debug, Clone, Copy)]
pub struct Wave {
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

impl Wave {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let x = self.freq * t + self.phase;
        let (s, c) = x.sin_cos();
        (self.amp * s, self.amp * self.freq * c, -self.amp * self.freq * self.freq * s)
    }
}

/// Sum-of-sinusoids motion on every axis and Euler angle.
#[derive(Debug, Clone)]
pub struct SinusoidTrajectory {
    pub origin: Vec3,
    pub position: [Vec<Wave>; 3],
    pub euler: [Vec<Wave>; 3],
}

impl SinusoidTrajectory {
    /// Smooth random motion with bounded rates, drawn from `rng`.
    pub fn random<R: rand::Rng>(rng: &mut R) -> Self {
        let mut waves = |amp: f64, n: usize| -> Vec<Wave> {
            (0..n)
                .map(|_| Wave {
                    amp: amp * rng.random_range(0.3..1.0),
                    freq: rng.random_range(0.5..2.5),
                    phase: rng.random_range(0.0..2.0 * PI),
                })
                .collect()
        };
        let position = [waves(1.0, 2), waves(1.0, 2), waves(0.3, 2)];
        let euler = [waves(0.15, 2), waves(0.15, 2), waves(0.6, 2)];
        Self { origin: Vec3::zeros(), position, euler }
    }
}

fn sum_waves(w: &[Wave], t: f64) -> (f64, f64, f64) {
    w.iter().fold((0.0, 0.0, 0.0), |acc, w| {
        let (a, b, c) = w.eval(t);
        (acc.0 + a, acc.1 + b, acc.2 + c)
    })
}

impl Trajectory for SinusoidTrajectory {
    fn sample(&self, t: f64) -> Kinematics {
        let mut p = self.origin;
        let mut v = Vec3::zeros();
        let mut a = Vec3::zeros();
        for k in 0..3 {
            let (x, dx, ddx) = sum_waves(&self.position[k], t);
            p[k] += x;
            v[k] = dx;
            a[k] = ddx;
        }
        let mut e = Vec3::zeros();
        let mut de = Vec3::zeros();
        for k in 0..3 {
            let (x, dx, _) = sum_waves(&self.euler[k], t);
            e[k] = x;
            de[k] = dx;
        }
        let (q, omega) = euler_kinematics(e, de);
        Kinematics { p, v, a, q, omega }
    }
}

/// Central-difference check helper used by tests.
#[cfg(test)]
pub(crate) fn numeric_rates<T: Trajectory>(traj: &T, t: f64) -> (Vec3, Vec3, Vec3) {
    let h = 1e-5;
    let a = traj.sample(t - h);
    let b = traj.sample(t + h);
    let v = (b.p - a.p) / (2.0 * h);
    let acc = (b.v - a.v) / (2.0 * h);
    let w = crate::geometry::log_so3(&(a.q.inverse() * b.q)) / (2.0 * h);
    (v, acc, w)
}
