//! Rotations, rigid poses and the 16-parameter keyframe state.
//!
//! Quaternions follow the Hamilton convention with scalar-first storage
//! (`nalgebra::UnitQuaternion`). Orientation increments are applied on the
//! right (body frame): `q ⊞ δθ = q ⊗ exp(δθ)`.

use nalgebra::{Matrix3, Quaternion, SVector, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = UnitQuaternion<f64>;
/// Tangent increment of a [`KeyframeState`]: `[δt, δv, δθ, δb_a, δb_g]`.
pub type Tangent15 = SVector<f64, 15>;
/// Tangent increment of a [`Pose`]: `[δt, δθ]`.
pub type Tangent6 = Vector6<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation increment of {0} rad is not below pi")]
    DeltaTooLarge(f64),
}

/// Flips the sign of `q` so that `w >= 0`.
pub fn canonicalize(q: Quat) -> Quat {
    if q.w < 0.0 {
        Quat::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Renormalizes and canonicalizes an arbitrary quaternion.
pub fn normalize(q: Quaternion<f64>) -> Quat {
    canonicalize(Quat::from_quaternion(q))
}

/// Hamilton product `a ⊗ b`, renormalized.
pub fn quat_multiply(a: &Quat, b: &Quat) -> Quat {
    normalize(a.quaternion() * b.quaternion())
}

pub fn quat_to_rotmat(q: &Quat) -> Mat3 {
    q.to_rotation_matrix().into_inner()
}

/// Recovers the quaternion of a rotation matrix (canonical sign).
pub fn rotmat_to_quat(r: &Mat3) -> Quat {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    canonicalize(Quat::from_rotation_matrix(&rot))
}

/// The vector part `(x, y, z)` of a quaternion.
pub fn vec_part(q: &Quaternion<f64>) -> Vec3 {
    Vec3::new(q.i, q.j, q.k)
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn exp_so3(phi: &Vec3) -> Quat {
    Quat::from_scaled_axis(*phi)
}

/// Rotation vector of `q`, taking the shortest path.
pub fn log_so3(q: &Quat) -> Vec3 {
    canonicalize(*q).scaled_axis()
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-10 {
        return Mat3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let theta = theta2.sqrt();
    Mat3::identity() - (1.0 - theta.cos()) / theta2 * k
        + (theta - theta.sin()) / (theta2 * theta) * k * k
}

/// Inverse of the right Jacobian of SO(3).
pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-10 {
        return Mat3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let theta = theta2.sqrt();
    let coef = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Mat3::identity() + 0.5 * k + coef * k * k
}

/// Left-multiplication matrix: `[p]_L q = p ⊗ q`, components ordered `(w, x, y, z)`.
pub fn quat_left_matrix(p: &Quaternion<f64>) -> nalgebra::Matrix4<f64> {
    let (w, x, y, z) = (p.w, p.i, p.j, p.k);
    nalgebra::Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

/// Right-multiplication matrix: `[q]_R p = p ⊗ q`.
pub fn quat_right_matrix(q: &Quaternion<f64>) -> nalgebra::Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    nalgebra::Matrix4::new(
        w, -x, -y, -z, //
        x, w, z, -y, //
        y, -z, w, x, //
        z, y, -x, w,
    )
}

/// Rigid body-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: Vec3,
    pub q: Quat,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(t: Vec3, q: Quat) -> Self {
        Self { t, q: canonicalize(q) }
    }

    pub fn identity() -> Self {
        Self { t: Vec3::zeros(), q: Quat::identity() }
    }

    pub fn rotation(&self) -> Mat3 {
        quat_to_rotmat(&self.q)
    }

    /// `p^w = R(q) p + t`
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.q * p + self.t
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.q.inverse() * (p - self.t)
    }

    /// `self ∘ other`
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(self.t + self.q * other.t, quat_multiply(&self.q, &other.q))
    }

    pub fn inverse(&self) -> Pose {
        let qi = self.q.inverse();
        Pose::new(-(qi * self.t), qi)
    }

    /// `self⁻¹ ∘ other`
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn boxplus(&self, delta: &Tangent6) -> Pose {
        let dt = delta.fixed_rows::<3>(0).into_owned();
        let dtheta = delta.fixed_rows::<3>(3).into_owned();
        Pose::new(self.t + dt, quat_multiply(&self.q, &exp_so3(&dtheta)))
    }

    /// Inverse of [`Pose::boxplus`]: returns δ with `base ⊞ δ = self`.
    pub fn boxminus(&self, base: &Pose) -> Tangent6 {
        let mut d = Tangent6::zeros();
        d.fixed_rows_mut::<3>(0).copy_from(&(self.t - base.t));
        d.fixed_rows_mut::<3>(3).copy_from(&log_so3(&(base.q.inverse() * self.q)));
        d
    }

    /// Interpolates translation linearly and rotation by slerp; `s ∈ [0, 1]`.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        let q = self.q.slerp(&other.q, s);
        Pose::new(self.t + s * (other.t - self.t), q)
    }

    pub fn rotation_angle(&self) -> f64 {
        log_so3(&self.q).norm()
    }
}

/// Keyframe state: position, velocity, orientation and IMU biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeState {
    pub t: Vec3,
    pub v: Vec3,
    pub q: Quat,
    pub b_a: Vec3,
    pub b_g: Vec3,
}

impl Default for KeyframeState {
    fn default() -> Self {
        Self {
            t: Vec3::zeros(),
            v: Vec3::zeros(),
            q: Quat::identity(),
            b_a: Vec3::zeros(),
            b_g: Vec3::zeros(),
        }
    }
}

impl KeyframeState {
    pub const TANGENT_DIM: usize = 15;

    pub fn from_pose(pose: &Pose) -> Self {
        Self { t: pose.t, q: pose.q, ..Self::default() }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.t, self.q)
    }

    pub fn set_pose(&mut self, pose: &Pose) {
        self.t = pose.t;
        self.q = canonicalize(pose.q);
    }

    /// Concatenated `[b_a, b_g]`.
    pub fn biases(&self) -> Vector6<f64> {
        let mut b = Vector6::zeros();
        b.fixed_rows_mut::<3>(0).copy_from(&self.b_a);
        b.fixed_rows_mut::<3>(3).copy_from(&self.b_g);
        b
    }

    pub fn boxplus(&self, delta: &Tangent15) -> Result<Self, GeometryError> {
        let dtheta: Vec3 = delta.fixed_rows::<3>(6).into_owned();
        let angle = dtheta.norm();
        if !(angle < std::f64::consts::PI) {
            return Err(GeometryError::DeltaTooLarge(angle));
        }
        Ok(Self {
            t: self.t + delta.fixed_rows::<3>(0),
            v: self.v + delta.fixed_rows::<3>(3),
            q: quat_multiply(&self.q, &exp_so3(&dtheta)),
            b_a: self.b_a + delta.fixed_rows::<3>(9),
            b_g: self.b_g + delta.fixed_rows::<3>(12),
        })
    }

    pub fn boxminus(&self, base: &KeyframeState) -> Tangent15 {
        let mut d = Tangent15::zeros();
        d.fixed_rows_mut::<3>(0).copy_from(&(self.t - base.t));
        d.fixed_rows_mut::<3>(3).copy_from(&(self.v - base.v));
        d.fixed_rows_mut::<3>(6).copy_from(&log_so3(&(base.q.inverse() * self.q)));
        d.fixed_rows_mut::<3>(9).copy_from(&(self.b_a - base.b_a));
        d.fixed_rows_mut::<3>(12).copy_from(&(self.b_g - base.b_g));
        d
    }
}

/// Sample mean and population covariance of a point set.
pub fn mean_covariance<'a, I>(points: I) -> Option<(Vec3, Mat3)>
where
    I: IntoIterator<Item = &'a Vec3>,
    I::IntoIter: Clone,
{
    let iter = points.into_iter();
    let n = iter.clone().count();
    if n == 0 {
        return None;
    }
    let mean = iter.clone().fold(Vec3::zeros(), |acc, p| acc + p) / n as f64;
    let cov = iter.fold(Mat3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / n as f64;
    Some((mean, cov))
}

/// Symmetric 3x3 eigendecomposition with ascending eigenvalues
/// `λ1 ≤ λ2 ≤ λ3`; column `i` of the returned matrix pairs with `λ(i+1)`.
pub fn sorted_eigen(cov: &Mat3) -> (Vec3, Mat3) {
    let eig = nalgebra::SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vec3::new(
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    let vectors = Mat3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    debug_assert!(values[0] <= values[1] && values[1] <= values[2]);
    (values, vectors)
}

/// Rotation with zero yaw component that maps the body-frame vector `a` onto +z.
pub fn gravity_alignment(a: &Vec3) -> Quat {
    let target = Vec3::z();
    Quat::rotation_between(a, &target)
        .map(canonicalize)
        .unwrap_or_else(|| Quat::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI))
}

/// Yaw angle (rotation about world z) of an orientation.
pub fn yaw_of(q: &Quat) -> f64 {
    let r = quat_to_rotmat(q);
    r[(1, 0)].atan2(r[(0, 0)])
}

/// Least-squares rigid transform `T` (rotation + translation, no scale)
/// minimizing `Σ ‖T·src_i − dst_i‖²`, via SVD of the cross-covariance.
/// `None` for fewer than three pairs.
pub fn rigid_align(src: &[Vec3], dst: &[Vec3]) -> Option<Pose> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vec3>() / n;
    let md = dst.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    for (a, b) in src.iter().zip(dst) {
        cov += (b - md) * (a - ms).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    let q = rotmat_to_quat(&r);
    Some(Pose::new(md - r * ms, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        normalize(q)
    }

    #[test]
    fn multiply_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_quat(&mut rng);
        let id = Quat::identity();
        assert!((quat_multiply(&id, &q).coords - q.coords).norm() < 1e-15);
        let e = quat_multiply(&q, &q.inverse());
        assert!((e.coords - id.coords).norm() < 1e-12);
    }

    #[test]
    fn quarter_turns_compose_to_half_turn() {
        let qz = Quat::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2);
        let r = quat_multiply(&qz, &qz);
        assert!((r.w).abs() < 1e-12);
        assert!(r.i.abs() < 1e-12 && r.j.abs() < 1e-12);
        assert!((r.k - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotmat_examples() {
        assert!((quat_to_rotmat(&Quat::identity()) - Mat3::identity()).norm() < 1e-15);
        let qx = Quat::from_axis_angle(&Vec3::x_axis(), PI);
        let expected = Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
        assert!((quat_to_rotmat(&qx) - expected).norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let r = quat_to_rotmat(&random_quat(&mut rng));
            assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vec_part_examples() {
        assert_eq!(vec_part(Quat::identity().quaternion()), Vec3::zeros());
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let q = Quaternion::new(s, s, 0.0, 0.0);
        assert_eq!(vec_part(&q), Vec3::new(s, 0.0, 0.0));
        assert_eq!(vec_part(&(-q)), Vec3::new(-s, 0.0, 0.0));
    }

    #[test]
    fn rotation_round_trip_1000() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let q = random_quat(&mut rng);
            let back = rotmat_to_quat(&quat_to_rotmat(&q));
            let err = (back.coords - q.coords).abs().max().min((back.coords + q.coords).abs().max());
            worst = worst.max(err);
        }
        assert!(worst < 1e-10, "worst {worst}");
    }

    #[test]
    fn group_action_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let a = random_quat(&mut rng);
            let b = random_quat(&mut rng);
            let p = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let lhs = quat_to_rotmat(&quat_multiply(&a, &b)) * p;
            let rhs = quat_to_rotmat(&a) * (quat_to_rotmat(&b) * p);
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn pose_compose_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = Pose::new(Vec3::new(rng.random_range(-9.0..9.0), 1.0, -2.0), random_quat(&mut rng));
            let e = p.compose(&p.inverse());
            assert!(e.t.norm() < 1e-9);
            assert!(e.rotation_angle() < 1e-9);
        }
    }

    #[test]
    fn boxplus_examples() {
        let x = KeyframeState::default();
        assert_eq!(x.boxplus(&Tangent15::zeros()).unwrap(), x);
        let mut d = Tangent15::zeros();
        d[6] = FRAC_PI_2;
        let y = x.boxplus(&d).unwrap();
        let expected = Quat::from_axis_angle(&Vec3::x_axis(), FRAC_PI_2);
        assert!(y.q.angle_to(&expected) < 1e-12);
        d[6] = PI;
        assert!(matches!(x.boxplus(&d), Err(GeometryError::DeltaTooLarge(_))));
    }

    #[test]
    fn eigen_is_sorted() {
        let cov = Mat3::new(4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 0.1);
        let (vals, vecs) = sorted_eigen(&cov);
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
        for i in 0..3 {
            let v = vecs.column(i);
            assert!((cov * v - vals[i] * v).norm() < 1e-10);
        }
    }

    #[test]
    fn jacobian_inverse_pair() {
        let phi = Vec3::new(0.3, -0.7, 1.1);
        let prod = right_jacobian(&phi) * right_jacobian_inv(&phi);
        assert!((prod - Mat3::identity()).norm() < 1e-12);
    }

    #[test]
    fn quaternion_product_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_quat(&mut rng).into_inner();
        let q = random_quat(&mut rng).into_inner();
        let prod = p * q;
        let l = quat_left_matrix(&p) * nalgebra::Vector4::new(q.w, q.i, q.j, q.k);
        let r = quat_right_matrix(&q) * nalgebra::Vector4::new(p.w, p.i, p.j, p.k);
        let want = nalgebra::Vector4::new(prod.w, prod.i, prod.j, prod.k);
        assert!((l - want).norm() < 1e-14);
        assert!((r - want).norm() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn tangent() -> impl Strategy<Value = Tangent15> {
            proptest::collection::vec(-1.0f64..1.0, 15).prop_map(|v| {
                let mut d = Tangent15::from_column_slice(&v);
                let rot: Vec3 = d.fixed_rows::<3>(6).into_owned();
                if rot.norm() > 3.0 {
                    d.fixed_rows_mut::<3>(6).copy_from(&(rot * (3.0 / rot.norm())));
                }
                d
            })
        }

        proptest! {
            #[test]
            fn boxplus_then_boxminus_recovers_delta(d in tangent(), seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = KeyframeState {
                    t: Vec3::new(1.0, 2.0, 3.0),
                    v: Vec3::new(-0.5, 0.1, 0.0),
                    q: random_quat(&mut rng),
                    b_a: Vec3::new(0.01, 0.0, -0.02),
                    b_g: Vec3::new(0.0, 0.001, 0.0),
                };
                let y = x.boxplus(&d).unwrap();
                let back = y.boxminus(&x);
                prop_assert!((back - d).abs().max() < 1e-8);
            }
        }
    }

    #[test]
    fn rigid_align_recovers_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth = Pose::new(Vec3::new(0.3, -1.2, 2.0), random_quat(&mut rng));
        let src: Vec<Vec3> = (0..20).map(|_| Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0))).collect();
        let dst: Vec<Vec3> = src.iter().map(|p| truth.transform_point(p)).collect();
        let est = rigid_align(&src, &dst).unwrap();
        assert!((est.t - truth.t).norm() < 1e-10);
        assert!(est.q.angle_to(&truth.q) < 1e-10);
        // planar (rank-2) configuration still yields a proper rotation
        let flat: Vec<Vec3> = src.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect();
        let dst: Vec<Vec3> = flat.iter().map(|p| truth.transform_point(p)).collect();
        let est = rigid_align(&flat, &dst).unwrap();
        assert!(est.q.angle_to(&truth.q) < 1e-9);
        assert!(rigid_align(&src[..2], &dst[..2]).is_none());
    }
}
