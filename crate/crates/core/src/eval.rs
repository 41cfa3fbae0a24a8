//! Trajectory evaluation: absolute position error after rigid alignment and
//! end-to-end error.

use crate::geometry::{rigid_align, Pose, Vec3};
use crate::io::TrajectoryRecord;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("fewer than {min} associated poses ({got})")]
    NoOverlap { min: usize, got: usize },
}

/// Maximum timestamp difference for estimate/reference association, s.
pub const ASSOCIATION_WINDOW: f64 = 0.05;

/// Pairs every estimate pose with the nearest reference pose within `window`.
pub fn associate(est: &TrajectoryRecord, reference: &TrajectoryRecord, window: f64) -> Vec<(Vec3, Vec3)> {
    let r = &reference.poses;
    let mut out = Vec::new();
    if r.is_empty() {
        return out;
    }
    for e in &est.poses {
        let k = r.partition_point(|p| p.time < e.time);
        let best = [k.checked_sub(1), (k < r.len()).then_some(k)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (r[a].time - e.time).abs().total_cmp(&(r[b].time - e.time).abs()));
        if let Some(j) = best.filter(|&j| (r[j].time - e.time).abs() <= window) {
            out.push((e.pose.t, r[j].pose.t));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ape {
    pub rmse: f64,
    pub max: f64,
    pub pairs: usize,
    /// Transform applied to the estimate.
    pub alignment: Pose,
}

/// APE with full statistics.
pub fn ape(est: &TrajectoryRecord, reference: &TrajectoryRecord) -> Result<Ape, EvalError> {
    let pairs = associate(est, reference, ASSOCIATION_WINDOW);
    if pairs.len() < 2 {
        return Err(EvalError::NoOverlap { min: 2, got: pairs.len() });
    }
    let (src, dst): (Vec<Vec3>, Vec<Vec3>) = pairs.iter().copied().unzip();
    // two pairs (or collinear sets) still admit a best-fit rotation; fall
    // back to translation-only when the closed form is unavailable
    let alignment = rigid_align(&src, &dst).unwrap_or_else(|| {
        let n = src.len() as f64;
        Pose::new(dst.iter().sum::<Vec3>() / n - src.iter().sum::<Vec3>() / n, Default::default())
    });
    let errs: Vec<f64> = src.iter().zip(&dst).map(|(s, d)| (alignment.transform_point(s) - d).norm()).collect();
    let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
    Ok(Ape { rmse, max: errs.iter().copied().fold(0.0, f64::max), pairs: errs.len(), alignment })
}

/// RMSE of position differences after timestamp association and rigid
/// (rotation + translation, no scale) alignment.
pub fn compute_ape(est: &TrajectoryRecord, reference: &TrajectoryRecord) -> Result<f64, EvalError> {
    ape(est, reference).map(|a| a.rmse)
}

/// `‖t_last − t_first‖`; meaningful as an error only for runs that end where
/// they started. Zero for fewer than two poses.
pub fn end_to_end_error(est: &TrajectoryRecord) -> f64 {
    match (est.poses.first(), est.poses.last()) {
        (Some(a), Some(b)) => (b.pose.t - a.pose.t).norm(),
        _ => 0.0,
    }
}
