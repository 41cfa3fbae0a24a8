//! Local line/plane fits, point-to-edge and point-to-plane metrics, and the
//! association-quality weight.

use crate::geometry::{mean_covariance, skew, sorted_eigen, Pose, Vec3};
use crate::scan::FeaturePoint;
use nalgebra::{Matrix5x3, RowVector3, RowVector6, Vector5};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Degenerate;

/// Half-distance between the two points that represent a fitted line.
pub const LINE_DELTA: f64 = 0.1;
/// Weight scale λ.
pub const WEIGHT_LAMBDA: f64 = 15.0;
/// Plane fits need `λ2 ≥ PLANE_SPREAD · λ3`: neighbours strung along a
/// single scan line fit any plane containing that line.
pub const PLANE_SPREAD: f64 = 1e-2;

/// Mean and principal direction of five points; `Degenerate` unless
/// `λ3 > factor · λ2`.
pub fn fit_line(points: &[Vec3; 5], factor: f64) -> Result<(Vec3, Vec3), Degenerate> {
    let (mean, cov) = mean_covariance(points).ok_or(Degenerate)?;
    let (lambda, vectors) = sorted_eigen(&cov);
    if lambda[2] > factor * lambda[1] && lambda[2] > 1e-12 {
        Ok((mean, vectors.column(2).normalize()))
    } else {
        Err(Degenerate)
    }
}

/// Least-squares plane `uᵀs + 1 = 0` through five points, solved by QR.
/// Returns `(u, n = u/‖u‖)`; `Degenerate` for rank-deficient systems or when
/// any point lies farther than `gate` from the fitted plane, and for
/// near-collinear neighbourhoods.
pub fn fit_plane(points: &[Vec3; 5], gate: f64) -> Result<(Vec3, Vec3), Degenerate> {
    let (_, cov) = mean_covariance(points).ok_or(Degenerate)?;
    let (lambda, _) = sorted_eigen(&cov);
    if lambda[1] < PLANE_SPREAD * lambda[2] {
        return Err(Degenerate);
    }
    let a = Matrix5x3::from_fn(|r, c| points[r][c]);
    let c = Vector5::repeat(-1.0);
    let qr = a.qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..3).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) || diag.iter().any(|d| *d < 1e-9 * max) {
        return Err(Degenerate);
    }
    let qtc = qr.q().transpose() * c;
    let u = r.solve_upper_triangular(&qtc).ok_or(Degenerate)?;
    let norm = u.norm();
    if !norm.is_finite() || norm < 1e-12 {
        return Err(Degenerate);
    }
    let n = u / norm;
    let d = 1.0 / norm;
    if points.iter().any(|s| (n.dot(s) + d).abs() > gate) {
        return Err(Degenerate);
    }
    Ok((u, n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCorrespondence {
    /// Feature in the scan's own frame.
    pub feature: FeaturePoint,
    /// `é = ē + δ n_e`
    pub a: Vec3,
    /// `è = ē − δ n_e`
    pub b: Vec3,
    pub n: Vec3,
    pub neighbor_reflectance: [f64; 5],
    pub weight: f64,
}

impl EdgeCorrespondence {
    pub fn new(feature: FeaturePoint, mean: Vec3, n: Vec3, neighbor_reflectance: [f64; 5]) -> Self {
        Self::with_delta(feature, mean, n, neighbor_reflectance, LINE_DELTA)
    }

    /// Line points placed `delta` either side of the mean.
    pub fn with_delta(feature: FeaturePoint, mean: Vec3, n: Vec3, neighbor_reflectance: [f64; 5], delta: f64) -> Self {
        Self { feature, a: mean + delta * n, b: mean - delta * n, n, neighbor_reflectance, weight: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneCorrespondence {
    pub feature: FeaturePoint,
    /// Unnormalized plane coefficients, `uᵀx + 1 = 0`.
    pub u: Vec3,
    pub n: Vec3,
    pub neighbor_reflectance: [f64; 5],
    pub weight: f64,
}

impl PlaneCorrespondence {
    pub fn new(feature: FeaturePoint, u: Vec3, neighbor_reflectance: [f64; 5]) -> Self {
        Self { feature, u, n: u.normalize(), neighbor_reflectance, weight: 1.0 }
    }

    /// Signed offset `d` in `nᵀx + d = 0`.
    pub fn offset(&self) -> f64 {
        1.0 / self.u.norm()
    }
}

/// `∂p^w/∂[δt, δθ]` for `p^w = R p^l + t` under right perturbation.
pub fn point_jacobian(pose: &Pose, p_l: &Vec3) -> nalgebra::Matrix3x6<f64> {
    let mut j = nalgebra::Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&nalgebra::Matrix3::identity());
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-pose.rotation() * skew(p_l)));
    j
}

/// `D_e = ‖(p−é)×(p−è)‖ / ‖é−è‖` and its gradient w.r.t. the pose tangent.
pub fn point_to_edge(pose: &Pose, corr: &EdgeCorrespondence) -> (f64, RowVector6<f64>) {
    let p = pose.transform_point(&corr.feature.p);
    let l = (corr.a - corr.b).norm();
    let c = (p - corr.a).cross(&(p - corr.b));
    let d = c.norm() / l;
    if c.norm() < 1e-15 {
        return (d, RowVector6::zeros());
    }
    let dd_dp: RowVector3<f64> = (c / c.norm()).transpose() * skew(&(corr.b - corr.a)) / l;
    (d, dd_dp * point_jacobian(pose, &corr.feature.p))
}

/// `D_s = |uᵀp + 1| / ‖u‖` and its gradient w.r.t. the pose tangent.
pub fn point_to_plane(pose: &Pose, corr: &PlaneCorrespondence) -> (f64, RowVector6<f64>) {
    let p = pose.transform_point(&corr.feature.p);
    let signed = (corr.u.dot(&p) + 1.0) / corr.u.norm();
    let s = if signed < 0.0 { -1.0 } else if signed > 0.0 { 1.0 } else { 0.0 };
    (signed.abs(), s * corr.n.transpose() * point_jacobian(pose, &corr.feature.p))
}

/// `λ · |(R ν)ᵀ n| · exp(−Σ|γ − γ_j|)` with reflectances scaled to [0, 1].
pub fn metric_weight(feature: &FeaturePoint, pose: &Pose, n: &Vec3, neighbor_reflectance: &[f64; 5], lambda: f64) -> f64 {
    let nu_w = pose.q * feature.nu;
    let gamma = feature.reflectance / 255.0;
    let mismatch: f64 = neighbor_reflectance.iter().map(|g| (gamma - g / 255.0).abs()).sum();
    lambda * nu_w.dot(n).abs() * (-mismatch).exp()
}

/// Rescales weights to mean one; all-zero weights become one.
pub fn normalize_weights(weights: &mut [f64]) {
    if weights.is_empty() {
        return;
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    if mean > 0.0 {
        for w in weights.iter_mut() {
            *w /= mean;
        }
    } else {
        weights.iter_mut().for_each(|w| *w = 1.0);
    }
}
