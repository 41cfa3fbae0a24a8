//! IMU preintegration between keyframes and the inertial residual.
//!
//! Error-state ordering throughout is `[α, β, θ, b_a, b_g]`, which lines up
//! with the keyframe tangent `[δt, δv, δθ, δb_a, δb_g]`. Integration uses the
//! midpoint rule; covariance and bias Jacobians are propagated with the
//! discrete error-state transition of the same scheme.

use crate::geometry::{
    canonicalize, exp_so3, log_so3, quat_left_matrix, quat_right_matrix, right_jacobian, skew, vec_part,
    KeyframeState, Mat3, Quat, Tangent15, Vec3,
};
use crate::solver::{ResidualFunction, Variable};
use nalgebra::{DMatrix, DVector, SMatrix, Vector6};
use std::sync::Arc;
use thiserror::Error;

pub type Mat15 = SMatrix<f64, 15, 15>;
type Mat15x18 = SMatrix<f64, 15, 18>;
type Mat18 = SMatrix<f64, 18, 18>;

pub const DEFAULT_GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImuError {
    #[error("at least two IMU samples are required")]
    EmptyStream,
    #[error("IMU timestamps not strictly increasing at sample {0}")]
    NonMonotonicTime(usize),
    #[error("preintegration covariance is not invertible")]
    SingularCovariance,
    #[error("IMU data does not cover [{0:.6}, {1:.6}]")]
    Uncovered(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Specific force, body frame.
    pub acc: Vec3,
    /// Angular rate, body frame.
    pub gyro: Vec3,
}

/// Continuous-time noise densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoise {
    /// Accelerometer white noise, m/s²/√Hz.
    pub acc: f64,
    /// Gyro white noise, rad/s/√Hz.
    pub gyro: f64,
    /// Accelerometer bias random walk, m/s³/√Hz.
    pub acc_walk: f64,
    /// Gyro bias random walk, rad/s²/√Hz.
    pub gyro_walk: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self { acc: 1e-2, gyro: 1e-3, acc_walk: 1e-4, gyro_walk: 1e-5 }
    }
}

/// World gravity vector; a level stationary sensor measures `+g` along z.
pub fn gravity_vector(magnitude: f64) -> Vec3 {
    Vec3::new(0.0, 0.0, magnitude)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedImu {
    pub alpha: Vec3,
    pub beta: Vec3,
    pub gamma: Quat,
    pub dt: f64,
    pub covariance: Mat15,
    /// Full error-state transition w.r.t. the start; the bias columns give
    /// the first-order bias Jacobians.
    pub jacobian: Mat15,
    pub bias_acc: Vec3,
    pub bias_gyro: Vec3,
    pub samples: usize,
}

/// Corrected pseudo-measurement for a given bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corrected {
    pub alpha: Vec3,
    pub beta: Vec3,
    pub gamma: Quat,
}

fn block(m: &Mat15, r: usize, c: usize) -> Mat3 {
    m.fixed_view::<3, 3>(r, c).into_owned()
}

const A: usize = 0;
const B: usize = 3;
const TH: usize = 6;
const BA: usize = 9;
const BG: usize = 12;

impl PreintegratedImu {
    /// Midpoint preintegration of `samples` with biases held at
    /// `(bias_acc, bias_gyro)`.
    pub fn integrate(samples: &[ImuSample], bias_acc: Vec3, bias_gyro: Vec3, noise: &ImuNoise) -> Result<Self, ImuError> {
        if samples.len() < 2 {
            return Err(ImuError::EmptyStream);
        }
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(ImuError::NonMonotonicTime(i + 1));
            }
        }
        let mut pim = Self {
            alpha: Vec3::zeros(),
            beta: Vec3::zeros(),
            gamma: Quat::identity(),
            dt: 0.0,
            covariance: Mat15::zeros(),
            jacobian: Mat15::identity(),
            bias_acc,
            bias_gyro,
            samples: samples.len(),
        };
        for w in samples.windows(2) {
            pim.step(&w[0], &w[1], noise);
        }
        Ok(pim)
    }

    fn step(&mut self, s0: &ImuSample, s1: &ImuSample, noise: &ImuNoise) {
        let dt = s1.t - s0.t;
        let r0 = self.gamma.to_rotation_matrix().into_inner();
        let w = 0.5 * (s0.gyro + s1.gyro) - self.bias_gyro;
        let gamma1 = self.gamma * exp_so3(&(w * dt));
        let r1 = gamma1.to_rotation_matrix().into_inner();
        let a0 = s0.acc - self.bias_acc;
        let a1 = s1.acc - self.bias_acc;
        let acc = 0.5 * (r0 * a0 + r1 * a1);

        let i3 = Mat3::identity();
        let wx = skew(&w);
        let a0x = skew(&a0);
        let a1x = skew(&a1);
        let dt2 = dt * dt;
        let rot_step = i3 - wx * dt;

        let mut f = Mat15::identity();
        let set = |m: &mut Mat15, r: usize, c: usize, v: Mat3| m.fixed_view_mut::<3, 3>(r, c).copy_from(&v);
        set(&mut f, A, B, i3 * dt);
        set(&mut f, A, TH, -0.25 * r0 * a0x * dt2 - 0.25 * r1 * a1x * rot_step * dt2);
        set(&mut f, A, BA, -0.25 * (r0 + r1) * dt2);
        set(&mut f, A, BG, 0.25 * r1 * a1x * dt2 * dt);
        set(&mut f, B, TH, -0.5 * r0 * a0x * dt - 0.5 * r1 * a1x * rot_step * dt);
        set(&mut f, B, BA, -0.5 * (r0 + r1) * dt);
        set(&mut f, B, BG, 0.5 * r1 * a1x * dt2);
        set(&mut f, TH, TH, rot_step);
        set(&mut f, TH, BG, -i3 * dt);

        let mut v = Mat15x18::zeros();
        let mut setv = |r: usize, c: usize, m: Mat3| v.fixed_view_mut::<3, 3>(r, c).copy_from(&m);
        let g_alpha = -0.125 * r1 * a1x * dt2 * dt;
        let g_beta = -0.25 * r1 * a1x * dt2;
        setv(A, 0, 0.25 * r0 * dt2);
        setv(A, 3, g_alpha);
        setv(A, 6, 0.25 * r1 * dt2);
        setv(A, 9, g_alpha);
        setv(B, 0, 0.5 * r0 * dt);
        setv(B, 3, g_beta);
        setv(B, 6, 0.5 * r1 * dt);
        setv(B, 9, g_beta);
        setv(TH, 3, 0.5 * i3 * dt);
        setv(TH, 9, 0.5 * i3 * dt);
        setv(BA, 12, i3 * dt);
        setv(BG, 15, i3 * dt);

        let mut q = Mat18::zeros();
        let vars = [
            noise.acc * noise.acc / dt,
            noise.gyro * noise.gyro / dt,
            noise.acc * noise.acc / dt,
            noise.gyro * noise.gyro / dt,
            noise.acc_walk * noise.acc_walk / dt,
            noise.gyro_walk * noise.gyro_walk / dt,
        ];
        for (k, s) in vars.iter().enumerate() {
            for d in 0..3 {
                q[(3 * k + d, 3 * k + d)] = *s;
            }
        }

        self.alpha += self.beta * dt + 0.5 * acc * dt2;
        self.beta += acc * dt;
        self.gamma = canonicalize(gamma1);
        self.dt += dt;
        self.jacobian = f * self.jacobian;
        let cov = f * self.covariance * f.transpose() + v * q * v.transpose();
        self.covariance = 0.5 * (cov + cov.transpose());
    }

    /// 15×6 Jacobian of `(α, β, θ)` (rows 0..9) and bias rows w.r.t. the
    /// linearization biases `[b_a, b_g]`.
    pub fn bias_jacobian(&self) -> SMatrix<f64, 15, 6> {
        self.jacobian.fixed_view::<15, 6>(0, 9).into_owned()
    }

    pub fn linearization_bias(&self) -> Vector6<f64> {
        let mut b = Vector6::zeros();
        b.fixed_rows_mut::<3>(0).copy_from(&self.bias_acc);
        b.fixed_rows_mut::<3>(3).copy_from(&self.bias_gyro);
        b
    }

    /// First-order bias correction; no repropagation.
    pub fn correct(&self, bias_acc: &Vec3, bias_gyro: &Vec3) -> Corrected {
        let dba = bias_acc - self.bias_acc;
        let dbg = bias_gyro - self.bias_gyro;
        if dba.norm() > 0.1 || dbg.norm() > 0.1 {
            log::warn!("bias moved far from its preintegration point ({:.3}, {:.3})", dba.norm(), dbg.norm());
        }
        let j = &self.jacobian;
        Corrected {
            alpha: self.alpha + block(j, A, BA) * dba + block(j, A, BG) * dbg,
            beta: self.beta + block(j, B, BA) * dba + block(j, B, BG) * dbg,
            gamma: canonicalize(self.gamma * exp_so3(&(block(j, TH, BG) * dbg))),
        }
    }

    /// Propagates a state through this interval using the bias-corrected
    /// measurement; biases are carried over unchanged.
    pub fn predict(&self, x: &KeyframeState, gravity: &Vec3) -> KeyframeState {
        let c = self.correct(&x.b_a, &x.b_g);
        let dt = self.dt;
        KeyframeState {
            t: x.t + x.v * dt - 0.5 * gravity * dt * dt + x.q * c.alpha,
            v: x.v - gravity * dt + x.q * c.beta,
            q: canonicalize(x.q * c.gamma),
            b_a: x.b_a,
            b_g: x.b_g,
        }
    }

    /// Upper-triangular `S` with `SᵀS = C⁻¹`, so `‖S r‖² = rᵀC⁻¹r`.
    pub fn sqrt_information(&self) -> Result<Mat15, ImuError> {
        let reg = self.covariance + Mat15::identity() * 1e-12;
        let info = reg.try_inverse().ok_or(ImuError::SingularCovariance)?;
        let info = 0.5 * (info + info.transpose());
        let l = nalgebra::Cholesky::new(info).ok_or(ImuError::SingularCovariance)?;
        Ok(l.l().transpose())
    }
}

/// Samples covering `[t0, t1]`, with both ends linearly interpolated so the
/// segment starts and ends exactly at the requested instants.
pub fn imu_segment(samples: &[ImuSample], t0: f64, t1: f64) -> Result<Vec<ImuSample>, ImuError> {
    if samples.len() < 2 || samples[0].t > t0 + 1e-9 || samples[samples.len() - 1].t < t1 - 1e-9 || t1 <= t0 {
        return Err(ImuError::Uncovered(t0, t1));
    }
    let at = |t: f64| -> ImuSample {
        let k = samples.partition_point(|s| s.t <= t).clamp(1, samples.len() - 1);
        let (a, b) = (&samples[k - 1], &samples[k]);
        let s = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        ImuSample { t, acc: a.acc + s * (b.acc - a.acc), gyro: a.gyro + s * (b.gyro - a.gyro) }
    };
    let mut out = vec![at(t0)];
    let first = samples.partition_point(|s| s.t <= t0 + 1e-9);
    for s in &samples[first..] {
        if s.t >= t1 - 1e-9 {
            break;
        }
        out.push(*s);
    }
    out.push(at(t1));
    Ok(out)
}

/// Raw (unwhitened) inertial residual between `xi` and `xj` with Jacobians
/// w.r.t. both 15-dim tangents.
pub fn imu_residual(xi: &KeyframeState, xj: &KeyframeState, pim: &PreintegratedImu, gravity: &Vec3) -> (Tangent15, Mat15, Mat15) {
    let c = pim.correct(&xi.b_a, &xi.b_g);
    let dt = pim.dt;
    let ri_t = xi.q.to_rotation_matrix().into_inner().transpose();
    let dp = xj.t - xi.t + 0.5 * gravity * dt * dt - xi.v * dt;
    let dv = xj.v - xi.v + gravity * dt;
    let a = xi.q.inverse() * xj.q;
    let e = a.into_inner() * c.gamma.inverse().into_inner();
    let s = if e.w < 0.0 { -1.0 } else { 1.0 };

    let mut r = Tangent15::zeros();
    r.fixed_rows_mut::<3>(A).copy_from(&(ri_t * dp - c.alpha));
    r.fixed_rows_mut::<3>(B).copy_from(&(ri_t * dv - c.beta));
    r.fixed_rows_mut::<3>(TH).copy_from(&(2.0 * s * vec_part(&e)));
    r.fixed_rows_mut::<3>(BA).copy_from(&(xj.b_a - xi.b_a));
    r.fixed_rows_mut::<3>(BG).copy_from(&(xj.b_g - xi.b_g));

    let j = &pim.jacobian;
    let i3 = Mat3::identity();
    let lr = quat_left_matrix(&a.into_inner()) * quat_right_matrix(&c.gamma.inverse().into_inner());
    let m: Mat3 = lr.fixed_view::<3, 3>(1, 1).into_owned();
    let ev = vec_part(&e);
    let right_e = e.w * i3 - skew(&ev);
    let dbg = xi.b_g - pim.bias_gyro;
    let jr = right_jacobian(&(block(j, TH, BG) * dbg));

    let mut ji = Mat15::zeros();
    let mut jj = Mat15::zeros();
    let put = |m_: &mut Mat15, rr: usize, cc: usize, v: Mat3| m_.fixed_view_mut::<3, 3>(rr, cc).copy_from(&v);
    put(&mut ji, A, 0, -ri_t);
    put(&mut ji, A, 3, -ri_t * dt);
    put(&mut ji, A, 6, skew(&(ri_t * dp)));
    put(&mut ji, A, 9, -block(j, A, BA));
    put(&mut ji, A, 12, -block(j, A, BG));
    put(&mut ji, B, 3, -ri_t);
    put(&mut ji, B, 6, skew(&(ri_t * dv)));
    put(&mut ji, B, 9, -block(j, B, BA));
    put(&mut ji, B, 12, -block(j, B, BG));
    put(&mut ji, TH, 6, -s * right_e);
    put(&mut ji, TH, 12, -s * m * jr * block(j, TH, BG));
    put(&mut ji, BA, 9, -i3);
    put(&mut ji, BG, 12, -i3);

    put(&mut jj, A, 0, ri_t);
    put(&mut jj, B, 3, ri_t);
    put(&mut jj, TH, 6, s * m);
    put(&mut jj, BA, 9, i3);
    put(&mut jj, BG, 12, i3);
    (r, ji, jj)
}

/// Whitened inertial factor between two `State` variables.
pub struct ImuFactor {
    pub pim: Arc<PreintegratedImu>,
    pub gravity: Vec3,
    sqrt_info: Mat15,
}

impl ImuFactor {
    pub fn new(pim: Arc<PreintegratedImu>, gravity: Vec3) -> Result<Self, ImuError> {
        let sqrt_info = pim.sqrt_information()?;
        Ok(Self { pim, gravity, sqrt_info })
    }

    /// Scales the whitening, e.g. to down-weight or strengthen the factor.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.sqrt_info *= factor;
        self
    }
}

impl ResidualFunction for ImuFactor {
    fn dim(&self) -> usize {
        15
    }

    fn evaluate(&self, vars: &[&Variable], with_jacobians: bool) -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let xi = vars[0].state().expect("IMU factor needs state variables");
        let xj = vars[1].state().expect("IMU factor needs state variables");
        let (r, ji, jj) = imu_residual(xi, xj, &self.pim, &self.gravity);
        let rw = self.sqrt_info * r;
        let jac = if with_jacobians {
            vec![
                DMatrix::from_column_slice(15, 15, (self.sqrt_info * ji).as_slice()),
                DMatrix::from_column_slice(15, 15, (self.sqrt_info * jj).as_slice()),
            ]
        } else {
            vec![]
        };
        (DVector::from_column_slice(rw.as_slice()), jac)
    }
}

/// Rotation angle between two orientations.
pub fn angle_between(a: &Quat, b: &Quat) -> f64 {
    log_so3(&(a.inverse() * b)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::jacobian_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant(t0: f64, t1: f64, hz: f64, acc: Vec3, gyro: Vec3) -> Vec<ImuSample> {
        let n = ((t1 - t0) * hz).round() as usize;
        (0..=n).map(|k| ImuSample { t: t0 + k as f64 / hz, acc, gyro }).collect()
    }

    fn random_state(rng: &mut ChaCha8Rng) -> KeyframeState {
        let mut v = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        KeyframeState { t: v() * 3.0, v: v(), q: exp_so3(&(v() * 1.5)), b_a: v() * 0.05, b_g: v() * 0.01 }
    }

    #[test]
    fn static_stream() {
        let s = constant(0.0, 0.1, 200.0, Vec3::new(0.0, 0.0, 9.81), Vec3::zeros());
        let p = PreintegratedImu::integrate(&s, Vec3::zeros(), Vec3::zeros(), &ImuNoise::default()).unwrap();
        assert!((p.alpha - Vec3::new(0.0, 0.0, 0.04905)).amax() < 1e-12);
        assert!((p.beta - Vec3::new(0.0, 0.0, 0.981)).amax() < 1e-12);
        assert!(angle_between(&p.gamma, &Quat::identity()) < 1e-15);
        assert!((p.dt - 0.1).abs() < 1e-12);
    }

    #[test]
    fn constant_spin() {
        let s = constant(0.0, 0.5, 200.0, Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0));
        let p = PreintegratedImu::integrate(&s, Vec3::zeros(), Vec3::zeros(), &ImuNoise::default()).unwrap();
        let want = Quat::from_axis_angle(&Vec3::z_axis(), 0.5);
        assert!(angle_between(&p.gamma, &want) < 1e-6);
    }

    #[test]
    fn errors() {
        let n = ImuNoise::default();
        let s = constant(0.0, 0.0, 200.0, Vec3::zeros(), Vec3::zeros());
        assert_eq!(PreintegratedImu::integrate(&s, Vec3::zeros(), Vec3::zeros(), &n), Err(ImuError::EmptyStream));
        let mut s = constant(0.0, 0.1, 200.0, Vec3::zeros(), Vec3::zeros());
        s[3].t = s[2].t;
        assert_eq!(PreintegratedImu::integrate(&s, Vec3::zeros(), Vec3::zeros(), &n), Err(ImuError::NonMonotonicTime(3)));
    }

    fn wobbly(t0: f64, t1: f64) -> Vec<ImuSample> {
        let n = ((t1 - t0) * 200.0).round() as usize;
        (0..=n)
            .map(|k| {
                let t = t0 + k as f64 / 200.0;
                ImuSample {
                    t,
                    acc: Vec3::new(0.3 * (2.0 * t).sin(), 0.2 * t.cos(), 9.81 + 0.1 * (3.0 * t).sin()),
                    gyro: Vec3::new(0.2 * t.sin(), 0.1 * (1.5 * t).cos(), 0.8 + 0.3 * t.sin()),
                }
            })
            .collect()
    }

    #[test]
    fn covariance_stays_psd() {
        let s = wobbly(0.0, 2.0);
        let p = PreintegratedImu::integrate(&s, Vec3::zeros(), Vec3::zeros(), &ImuNoise::default()).unwrap();
        let eig = nalgebra::SymmetricEigen::new(p.covariance);
        assert!(eig.eigenvalues.min() > -1e-12);
        assert!(p.sqrt_information().is_ok());
    }

    #[test]
    fn bias_correction_is_linear_in_jacobian() {
        let s = wobbly(0.0, 1.0);
        let p = PreintegratedImu::integrate(&s, Vec3::zeros(), Vec3::zeros(), &ImuNoise::default()).unwrap();
        let unchanged = p.correct(&Vec3::zeros(), &Vec3::zeros());
        assert_eq!(unchanged.alpha, p.alpha);
        let dba = Vec3::new(1e-3, 0.0, 0.0);
        let c = p.correct(&dba, &Vec3::zeros());
        let want = p.alpha + p.bias_jacobian().fixed_view::<3, 3>(0, 0) * dba;
        assert!((c.alpha - want).amax() < 1e-12);
    }

    #[test]
    fn gyro_bias_correction_beats_no_correction() {
        let s = wobbly(0.0, 1.0);
        let n = ImuNoise::default();
        let p = PreintegratedImu::integrate(&s, Vec3::zeros(), Vec3::zeros(), &n).unwrap();
        let bg = Vec3::new(1e-3, -1e-3, 1e-3);
        let truth = PreintegratedImu::integrate(&s, Vec3::zeros(), bg, &n).unwrap();
        let c = p.correct(&Vec3::zeros(), &bg);
        let err_corr = angle_between(&c.gamma, &truth.gamma);
        let err_raw = angle_between(&p.gamma, &truth.gamma);
        assert!(err_corr < 0.01 * err_raw, "{err_corr} vs {err_raw}");
        assert!((c.alpha - truth.alpha).norm() < 0.05 * (p.alpha - truth.alpha).norm());
    }

    #[test]
    fn concatenation_consistency() {
        let s = wobbly(0.0, 2.0);
        let n = ImuNoise::default();
        let z = Vec3::zeros();
        let full = PreintegratedImu::integrate(&s, z, z, &n).unwrap();
        let a = PreintegratedImu::integrate(&s[..=200], z, z, &n).unwrap();
        let b = PreintegratedImu::integrate(&s[200..], z, z, &n).unwrap();
        let alpha = a.alpha + a.beta * b.dt + a.gamma * b.alpha;
        let beta = a.beta + a.gamma * b.beta;
        let gamma = a.gamma * b.gamma;
        assert!((alpha - full.alpha).amax() < 1e-8);
        assert!((beta - full.beta).amax() < 1e-8);
        assert!(angle_between(&gamma, &full.gamma) < 1e-8);
    }

    #[test]
    fn predicted_state_has_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = wobbly(0.0, 1.0);
        let xi = random_state(&mut rng);
        let p = PreintegratedImu::integrate(&s, xi.b_a, xi.b_g, &ImuNoise::default()).unwrap();
        let g = gravity_vector(DEFAULT_GRAVITY);
        let xj = p.predict(&xi, &g);
        let (r, _, _) = imu_residual(&xi, &xj, &p, &g);
        assert!(r.amax() < 1e-12, "{r}");
    }

    #[test]
    fn static_states_give_zero_residual() {
        let s = constant(0.0, 0.3, 200.0, Vec3::new(0.0, 0.0, 9.81), Vec3::zeros());
        let p = PreintegratedImu::integrate(&s, Vec3::zeros(), Vec3::zeros(), &ImuNoise::default()).unwrap();
        let x = KeyframeState::default();
        let (r, _, _) = imu_residual(&x, &x, &p, &gravity_vector(9.81));
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn factor_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = wobbly(0.0, 0.3);
        let p = Arc::new(PreintegratedImu::integrate(&s, Vec3::zeros(), Vec3::zeros(), &ImuNoise::default()).unwrap());
        let f = ImuFactor::new(p.clone(), gravity_vector(9.81)).unwrap();
        for _ in 0..20 {
            let xi = Variable::State(random_state(&mut rng));
            let xj = Variable::State(random_state(&mut rng));
            // compare raw Jacobians (whitening scales errors by ~1e3)
            struct Raw(Arc<PreintegratedImu>);
            impl ResidualFunction for Raw {
                fn dim(&self) -> usize {
                    15
                }
                fn evaluate(&self, v: &[&Variable], wj: bool) -> (DVector<f64>, Vec<DMatrix<f64>>) {
                    let (r, a, b) = imu_residual(v[0].state().unwrap(), v[1].state().unwrap(), &self.0, &gravity_vector(9.81));
                    let j = if wj {
                        vec![DMatrix::from_column_slice(15, 15, a.as_slice()), DMatrix::from_column_slice(15, 15, b.as_slice())]
                    } else {
                        vec![]
                    };
                    (DVector::from_column_slice(r.as_slice()), j)
                }
            }
            let e = jacobian_error(&Raw(p.clone()), &[&xi, &xj], 1e-6);
            assert!(e < 1e-5, "raw jacobian error {e}");
            let (_, jw) = f.evaluate(&[&xi, &xj], true);
            assert_eq!(jw.len(), 2);
        }
    }

    #[test]
    fn segment_interpolates_ends() {
        let s = constant(0.0, 1.0, 200.0, Vec3::new(0.0, 0.0, 9.81), Vec3::zeros());
        let seg = imu_segment(&s, 0.1234, 0.2234).unwrap();
        assert!((seg[0].t - 0.1234).abs() < 1e-15);
        assert!((seg.last().unwrap().t - 0.2234).abs() < 1e-15);
        assert!(seg.windows(2).all(|w| w[1].t > w[0].t));
        assert!(imu_segment(&s, 0.5, 1.5).is_err());
    }
}
