//! Feature association, frame-to-model registration, translational de-skew
//! and keyframe selection.

pub mod map;
pub mod residuals;

use crate::factors::{EdgeFactor, PlaneFactor};
use crate::geometry::{sorted_eigen, Mat3, Pose, Vec3};
use crate::scan::{FeatureCloud, FeatureKind, FeaturePoint, Sweep, SWEEP_PERIOD};
use crate::solver::{HuberLoss, Problem, SolverError, SolverOptions, Termination, Variable};
pub use map::LocalFeatureMap;
use rayon::prelude::*;
pub use residuals::{
    fit_line, fit_plane, metric_weight, normalize_weights, point_to_edge, point_to_plane, Degenerate, EdgeCorrespondence,
    PlaneCorrespondence,
};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("insufficient constraints: {0}")]
    InsufficientConstraints(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// Association gate for the 5-NN search.
    pub nn_radius: f64,
    /// `fit_line` accepts when `λ3 > line_factor · λ2`.
    pub line_factor: f64,
    /// `fit_plane` point-to-plane gate.
    pub plane_gate: f64,
    /// Half-spacing of the two points representing a fitted line.
    pub line_delta: f64,
    pub lambda: f64,
    /// Huber scale on registration residuals; `0` disables the robust loss.
    pub robust_scale: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub min_correspondences: usize,
    pub overlap_radius: f64,
    pub overlap_threshold: f64,
    pub keyframe_gap: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            nn_radius: 1.0,
            line_factor: 3.0,
            plane_gate: 0.2,
            line_delta: residuals::LINE_DELTA,
            lambda: residuals::WEIGHT_LAMBDA,
            robust_scale: 0.1,
            outer_iterations: 3,
            inner_iterations: 8,
            min_correspondences: 12,
            overlap_radius: 0.5,
            overlap_threshold: 0.6,
            keyframe_gap: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondences {
    pub edges: Vec<EdgeCorrespondence>,
    pub planes: Vec<PlaneCorrespondence>,
    /// Kinds that contributed nothing because the map held fewer than five points.
    pub sparse_kinds: Vec<FeatureKind>,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.edges.len() + self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn neighbors5(map: &LocalFeatureMap, kind: FeatureKind, q: &Vec3, params: &MatchParams, exclude: Option<u64>) -> Option<([Vec3; 5], [f64; 5])> {
    let nn = map.knn(kind, q, 5, params.nn_radius, exclude);
    if nn.len() < 5 {
        return None;
    }
    let pts = std::array::from_fn(|i| map.point(kind, nn[i].index).p);
    let refl = std::array::from_fn(|i| map.point(kind, nn[i].index).reflectance);
    Some((pts, refl))
}

/// 5-NN association of every feature at `pose`, with fits, degeneracy
/// gates and per-kind normalized weights. `exclude` hides the map points
/// contributed by one frame (a keyframe must not match its own echo).
pub fn associate(features: &FeatureCloud, pose: &Pose, map: &LocalFeatureMap, params: &MatchParams, exclude: Option<u64>) -> Correspondences {
    let mut out = Correspondences::default();
    if map.len(FeatureKind::Edge) < 5 {
        out.sparse_kinds.push(FeatureKind::Edge);
    } else {
        out.edges = features
            .edges
            .par_iter()
            .filter_map(|f| {
                let q = pose.transform_point(&f.p);
                let (pts, refl) = neighbors5(map, FeatureKind::Edge, &q, params, exclude)?;
                let (mean, n) = fit_line(&pts, params.line_factor).ok()?;
                let mut c = EdgeCorrespondence::with_delta(*f, mean, n, refl, params.line_delta);
                c.weight = metric_weight(f, pose, &n, &refl, params.lambda);
                Some(c)
            })
            .collect();
    }
    if map.len(FeatureKind::Plane) < 5 {
        out.sparse_kinds.push(FeatureKind::Plane);
    } else {
        out.planes = features
            .planes
            .par_iter()
            .filter_map(|f| {
                let q = pose.transform_point(&f.p);
                let (pts, refl) = neighbors5(map, FeatureKind::Plane, &q, params, exclude)?;
                let (u, n) = fit_plane(&pts, params.plane_gate).ok()?;
                let mut c = PlaneCorrespondence::new(*f, u, refl);
                c.weight = metric_weight(f, pose, &n, &refl, params.lambda);
                Some(c)
            })
            .collect();
    }
    let mut w: Vec<f64> = out.edges.iter().map(|c| c.weight).collect();
    normalize_weights(&mut w);
    out.edges.iter_mut().zip(w).for_each(|(c, w)| c.weight = w);
    let mut w: Vec<f64> = out.planes.iter().map(|c| c.weight).collect();
    normalize_weights(&mut w);
    out.planes.iter_mut().zip(w).for_each(|(c, w)| c.weight = w);
    out
}

/// Adds unweighted (`weighted = false`) or weighted geometric blocks on
/// variable `var`.
pub fn add_lidar_blocks(problem: &mut Problem, var: usize, corr: &Correspondences, weighted: bool, loss: Option<crate::solver::HuberLoss>) -> Result<(), SolverError> {
    for c in &corr.edges {
        let w = if weighted { c.weight } else { 1.0 };
        if w > 0.0 {
            problem.add_block(vec![var], Box::new(EdgeFactor::new(c, w)), loss)?;
        }
    }
    for c in &corr.planes {
        let w = if weighted { c.weight } else { 1.0 };
        if w > 0.0 {
            problem.add_block(vec![var], Box::new(PlaneFactor::new(c, w)), loss)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub pose: Pose,
    pub cost: f64,
    pub correspondences: usize,
    pub iterations: usize,
    /// Costs after every accepted step, per outer iteration.
    pub cost_history: Vec<Vec<f64>>,
}

/// Smallest-to-largest eigenvalue ratio of a 6×6 information matrix; a
/// value near zero flags an unobservable direction.
pub fn information_conditioning(h: &nalgebra::DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let max = eig.eigenvalues.max();
    if max <= 0.0 {
        return 0.0;
    }
    eig.eigenvalues.min() / max
}

const RANK_TOLERANCE: f64 = 1e-6;

/// Frame-to-model registration: minimizes `Σ D_e² + Σ D_s²` over the pose
/// with re-association before each outer iteration.
pub fn register_scan(features: &FeatureCloud, map: &LocalFeatureMap, init: &Pose, params: &MatchParams) -> Result<Registration, MatchError> {
    if !init.t.iter().all(|v| v.is_finite()) {
        return Err(MatchError::InsufficientConstraints("non-finite initial pose".into()));
    }
    let mut pose = *init;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut last = (0.0, 0usize);
    for outer in 0..params.outer_iterations {
        let corr = associate(features, &pose, map, params, None);
        if corr.len() < params.min_correspondences {
            return Err(MatchError::InsufficientConstraints(format!("{} correspondences", corr.len())));
        }
        let mut problem = Problem::new();
        let v = problem.add_variable(Variable::Pose(pose));
        let loss = (params.robust_scale > 0.0).then_some(HuberLoss { scale: params.robust_scale });
        add_lidar_blocks(&mut problem, v, &corr, false, loss)?;
        if outer == 0 {
            let (h, _) = problem.marginal_info()?;
            if information_conditioning(&h) < RANK_TOLERANCE {
                return Err(MatchError::InsufficientConstraints("rank-deficient information".into()));
            }
        }
        let report = problem.solve(&SolverOptions { max_iterations: params.inner_iterations, ..Default::default() })?;
        iterations += report.iterations;
        history.push(report.cost_history.clone());
        let moved = problem.variable(v).pose().unwrap().boxminus(&pose).amax();
        pose = problem.variable(v).pose().unwrap();
        last = (report.final_cost, corr.len());
        if report.termination == Termination::Converged && moved < 1e-9 {
            break;
        }
    }
    Ok(Registration { pose, cost: last.0, correspondences: last.1, iterations, cost_history: history })
}

/// Position offset (in the end frame) of a point captured at sweep fraction `s`.
fn translational_shift(prev: &Pose, now: &Pose, s: f64) -> Vec3 {
    let t = prev.t + s * (now.t - prev.t);
    now.q.inverse() * (t - now.t)
}

/// Removes translational motion distortion from a rotationally de-skewed
/// sweep given the poses at its start and end.
pub fn deskew_translational(w: &Sweep, prev: &Pose, now: &Pose) -> Sweep {
    let mut out = w.clone();
    for p in out.points.iter_mut().filter(|p| p.valid) {
        let s = (p.timestamp as f64 / SWEEP_PERIOD).clamp(0.0, 1.0);
        let v = p.position() + translational_shift(prev, now, s);
        p.set_position(&v);
    }
    out
}

/// Feature-level counterpart of [`deskew_translational`].
pub fn deskew_features_translational(cloud: &FeatureCloud, prev: &Pose, now: &Pose) -> FeatureCloud {
    let fix = |f: &FeaturePoint| {
        let s = (f.timestamp / SWEEP_PERIOD).clamp(0.0, 1.0);
        FeaturePoint { p: f.p + translational_shift(prev, now, s), ..*f }
    };
    FeatureCloud { edges: cloud.edges.iter().map(fix).collect(), planes: cloud.planes.iter().map(fix).collect() }
}

/// Fraction of features (placed at `pose`) with a map point within `radius`.
pub fn overlap_ratio(features: &FeatureCloud, pose: &Pose, map: &LocalFeatureMap, radius: f64) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    let hits = features.all().filter(|f| map.nearest_any(&pose.transform_point(&f.p), radius).is_some()).count();
    hits as f64 / features.len() as f64
}

/// Keyframe rule on a precomputed overlap ratio.
pub fn keyframe_decision(overlap: f64, frames_since_kf: usize, params: &MatchParams) -> bool {
    overlap < params.overlap_threshold || frames_since_kf >= params.keyframe_gap
}

pub fn select_keyframe(features: &FeatureCloud, pose: &Pose, map: &LocalFeatureMap, frames_since_kf: usize, params: &MatchParams) -> bool {
    keyframe_decision(overlap_ratio(features, pose, map, params.overlap_radius), frames_since_kf, params)
}

/// Keyframe selection over a frame sequence. The first frame is a keyframe;
/// failed registrations never are, but still count towards the gap.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyframePolicy {
    since_keyframe: Option<usize>,
}

impl KeyframePolicy {
    pub fn new() -> Self {
        Self::default()
    }

    /// Regular frames since the last keyframe (`None` before the first frame).
    pub fn frames_since_keyframe(&self) -> Option<usize> {
        self.since_keyframe
    }

    /// Decides the next frame from its map overlap; `None` marks a failed
    /// registration.
    pub fn decide(&mut self, overlap: Option<f64>, params: &MatchParams) -> bool {
        let is_keyframe = match (self.since_keyframe, overlap) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(n), Some(o)) => keyframe_decision(o, n, params),
        };
        self.since_keyframe = Some(if is_keyframe { 0 } else { self.since_keyframe.map_or(0, |n| n + 1) });
        is_keyframe
    }
}

/// Largest eigenvalue direction sanity helper used by tests and diagnostics.
pub fn principal_axis(cov: &Mat3) -> Vec3 {
    sorted_eigen(cov).1.column(2).into_owned()
}
