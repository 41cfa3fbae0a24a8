//! Poses of regular frames from a small factor graph between two fixed
//! keyframes.

use super::{BackendError, BackendParams};
use crate::factors::RelativePoseFactor;
use crate::geometry::{KeyframeState, Pose};
use crate::imu::{ImuFactor, PreintegratedImu};
use crate::solver::{Problem, SolverOptions, Variable};
use std::sync::Arc;

/// Frontend relative-pose sigmas used when no IMU link is available.
const FRONTEND_SIGMA: (f64, f64) = (0.01, 0.001);

/// Isotropic position/rotation sigmas implied by an IMU link.
fn link_sigmas(pim: &PreintegratedImu) -> (f64, f64) {
    let c = &pim.covariance;
    let st = ((c[(0, 0)] + c[(1, 1)] + c[(2, 2)]) / 3.0).sqrt().max(1e-9);
    let sr = ((c[(6, 6)] + c[(7, 7)] + c[(8, 8)]) / 3.0).sqrt().max(1e-9);
    (st, sr)
}

/// Optimizes the `n` regular frames between `a` and `b` (both held fixed).
///
/// `frontend` holds `n + 2` frontend poses (a, regular frames…, b).
/// `links` holds `n + 1` preintegrations between consecutive frames, or is
/// empty when IMU constraints are disabled. The frontend relative motion
/// enters as weak factors with `params.frontend_weight` of the IMU
/// information.
pub fn optimize_regular_frames(
    a: &KeyframeState,
    b: &KeyframeState,
    frontend: &[Pose],
    links: &[Arc<PreintegratedImu>],
    params: &BackendParams,
) -> Result<Vec<Pose>, BackendError> {
    if frontend.len() < 2 {
        return Err(BackendError::InvalidWindow("frontend poses must include both keyframes".into()));
    }
    let n = frontend.len() - 2;
    if n == 0 {
        return Ok(Vec::new());
    }
    let with_imu = !links.is_empty();
    if with_imu && links.len() != n + 1 {
        return Err(BackendError::InvalidWindow(format!("{} IMU links for {n} regular frames", links.len())));
    }
    let mut problem = Problem::new();
    let mut states = vec![*a];
    if with_imu {
        for link in &links[..n] {
            let prev = *states.last().unwrap();
            states.push(link.predict(&prev, &params.gravity));
        }
    } else {
        for k in 1..=n {
            let prev = states.last().unwrap().pose();
            let rel = frontend[k - 1].between(&frontend[k]);
            let mut s = *a;
            s.set_pose(&prev.compose(&rel));
            states.push(s);
        }
    }
    states.push(*b);
    for s in &states {
        problem.add_variable(if with_imu { Variable::State(*s) } else { Variable::Pose(s.pose()) });
    }
    problem.set_fixed(0, true);
    problem.set_fixed(n + 1, true);
    let scale = params.frontend_weight.sqrt();
    for k in 0..=n {
        let rel = frontend[k].between(&frontend[k + 1]);
        let factor = if with_imu {
            let f = ImuFactor::new(links[k].clone(), params.gravity)?;
            problem.add_block(vec![k, k + 1], Box::new(f), None)?;
            let (st, sr) = link_sigmas(&links[k]);
            RelativePoseFactor::isotropic(rel, st / scale, sr / scale)
        } else {
            RelativePoseFactor::isotropic(rel, FRONTEND_SIGMA.0, FRONTEND_SIGMA.1)
        };
        problem.add_block(vec![k, k + 1], Box::new(factor), None)?;
    }
    problem.solve(&SolverOptions { max_iterations: params.inner_iterations, ..Default::default() })?;
    Ok((1..=n).map(|k| problem.variable(k).pose().expect("pose-valued variable")).collect())
}
