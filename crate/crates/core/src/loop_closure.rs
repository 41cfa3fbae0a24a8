//! Global pose graph over all frames, ICP-verified loop detection on
//! keyframes, pose-graph relaxation and global map assembly.

use crate::factors::RelativePoseFactor;
use crate::geometry::{rigid_align, Pose, Tangent6, Vec3};
use crate::kdtree::KdTree;
use crate::preprocess::downsample_voxel;
use crate::scan::{FeatureCloud, FeaturePoint};
use crate::solver::{Problem, SolveReport, SolverError, SolverOptions, Variable};
use nalgebra::Matrix6;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error("ICP diverged: inlier ratio {0:.3}")]
    IcpDiverged(f64),
    #[error("ICP needs at least {min} points per cloud, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_correspondence: f64,
    pub max_iterations: usize,
    /// Stop when the per-iteration increment falls below this (m and rad).
    pub tolerance: f64,
    pub min_inlier_ratio: f64,
    pub min_points: usize,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self { max_correspondence: 1.0, max_iterations: 30, tolerance: 1e-6, min_inlier_ratio: 0.1, min_points: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    pub pose: Pose,
    /// Mean squared inlier distance at `pose`.
    pub fitness: f64,
    pub inlier_ratio: f64,
    pub iterations: usize,
}

fn correspondences(source: &[Vec3], tree: &KdTree, pose: &Pose, cap: f64) -> (Vec<Vec3>, Vec<Vec3>, f64) {
    let mut src = Vec::with_capacity(source.len());
    let mut dst = Vec::with_capacity(source.len());
    let mut sq = 0.0;
    for p in source {
        if let Some(n) = tree.nearest(&pose.transform_point(p), cap) {
            src.push(*p);
            dst.push(*tree.point(n.index));
            sq += n.dist_sq;
        }
    }
    (src, dst, sq)
}

/// Point-to-point ICP of `source` onto a prebuilt target tree.
pub fn icp_align_tree(source: &[Vec3], target: &KdTree, init: &Pose, params: &IcpParams) -> Result<IcpResult, LoopError> {
    let got = source.len().min(target.len());
    if got < params.min_points {
        return Err(LoopError::TooFewPoints { min: params.min_points, got });
    }
    let mut pose = *init;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        let (src, dst, _) = correspondences(source, target, &pose, params.max_correspondence);
        let ratio = src.len() as f64 / source.len() as f64;
        if ratio < params.min_inlier_ratio {
            return Err(LoopError::IcpDiverged(ratio));
        }
        let Some(next) = rigid_align(&src, &dst) else {
            return Err(LoopError::IcpDiverged(ratio));
        };
        iterations += 1;
        let step = pose.between(&next);
        pose = next;
        if step.t.norm() < params.tolerance && step.rotation_angle() < params.tolerance {
            break;
        }
    }
    let (src, _, sq) = correspondences(source, target, &pose, params.max_correspondence);
    let inlier_ratio = src.len() as f64 / source.len() as f64;
    if inlier_ratio < params.min_inlier_ratio || src.is_empty() {
        return Err(LoopError::IcpDiverged(inlier_ratio));
    }
    Ok(IcpResult { pose, fitness: sq / src.len() as f64, inlier_ratio, iterations })
}

/// Point-to-point ICP: finds `T` with `T·source ≈ target`, starting at `init`.
pub fn icp_align(source: &[Vec3], target: &[Vec3], init: &Pose, params: &IcpParams) -> Result<IcpResult, LoopError> {
    icp_align_tree(source, &KdTree::build(target.to_vec()), init, params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphNode {
    pub id: u64,
    pub time: f64,
    /// Current (corrected) pose.
    pub pose: Pose,
    /// Pose as delivered by odometry.
    pub odometry: Pose,
    pub keyframe: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Sequential,
    Loop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    /// Relative pose `T_from⁻¹ T_to`.
    pub measured: Pose,
    pub sqrt_info: Matrix6<f64>,
    pub kind: EdgeKind,
}

impl GraphEdge {
    fn factor(&self) -> RelativePoseFactor {
        RelativePoseFactor::new(self.measured, self.sqrt_info)
    }
}

fn isotropic_sqrt_info(sigma_t: f64, sigma_r: f64) -> Matrix6<f64> {
    let mut s = Matrix6::zeros();
    for k in 0..3 {
        s[(k, k)] = 1.0 / sigma_t;
        s[(k + 3, k + 3)] = 1.0 / sigma_r;
    }
    s
}

/// Pose graph whose first node is the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
    keyframes: Vec<usize>,
    index: HashMap<u64, usize>,
    sequential_sqrt_info: Matrix6<f64>,
}

impl PoseGraph {
    /// Sequential edges get isotropic sigmas `sigma_t` (m) and `sigma_r` (rad).
    pub fn new(sigma_t: f64, sigma_r: f64) -> Self {
        Self {
            nodes: Vec::new(),
            edges: Vec::new(),
            keyframes: Vec::new(),
            index: HashMap::new(),
            sequential_sqrt_info: isotropic_sqrt_info(sigma_t, sigma_r),
        }
    }

    /// Appends a frame; its pose continues from the previous node's current
    /// pose with the odometry increment. Returns the node index.
    pub fn add_frame(&mut self, id: u64, time: f64, odometry: Pose, keyframe: bool) -> usize {
        let i = self.nodes.len();
        let pose = match self.nodes.last() {
            None => odometry,
            Some(prev) => {
                let rel = prev.odometry.between(&odometry);
                self.edges.push(GraphEdge {
                    from: i - 1,
                    to: i,
                    measured: rel,
                    sqrt_info: self.sequential_sqrt_info,
                    kind: EdgeKind::Sequential,
                });
                prev.pose.compose(&rel)
            }
        };
        self.nodes.push(GraphNode { id, time, pose, odometry, keyframe });
        if keyframe {
            self.keyframes.push(i);
        }
        self.index.insert(id, i);
        i
    }

    pub fn add_loop(&mut self, c: &LoopCandidate) {
        self.edges.push(GraphEdge {
            from: c.candidate_index,
            to: c.query_index,
            measured: c.relative,
            sqrt_info: Matrix6::identity() * (1.0 / c.fitness.max(MIN_FITNESS)).sqrt(),
            kind: EdgeKind::Loop,
        });
    }

    pub fn add_edge(&mut self, edge: GraphEdge) {
        self.edges.push(edge);
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &GraphNode {
        &self.nodes[i]
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    /// Node indices of keyframes, in order.
    pub fn keyframes(&self) -> &[usize] {
        &self.keyframes
    }

    pub fn loop_count(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Loop).count()
    }

    pub fn set_pose(&mut self, i: usize, pose: Pose) {
        self.nodes[i].pose = pose;
    }

    /// Unwhitened residual of an edge at the current poses.
    pub fn edge_error(&self, e: &GraphEdge) -> Tangent6 {
        e.factor().error(&self.nodes[e.from].pose, &self.nodes[e.to].pose).0
    }

    pub fn cost(&self) -> f64 {
        self.edges.iter().map(|e| 0.5 * (e.sqrt_info * self.edge_error(e)).norm_squared()).sum()
    }

    /// Relaxes all poses with the first node held fixed. Poses are left
    /// unchanged on failure.
    pub fn optimize(&mut self, opts: &SolverOptions) -> Result<SolveReport, SolverError> {
        if self.nodes.is_empty() {
            return Err(SolverError::InvalidProblem("empty pose graph".into()));
        }
        let mut problem = Problem::new();
        for n in &self.nodes {
            problem.add_variable(Variable::Pose(n.pose));
        }
        problem.set_fixed(0, true);
        for e in &self.edges {
            problem.add_block(vec![e.from, e.to], Box::new(e.factor()), None)?;
        }
        let report = problem.solve(opts)?;
        for (i, n) in self.nodes.iter_mut().enumerate().skip(1) {
            n.pose = problem.variable(i).pose().expect("pose-valued variable");
        }
        Ok(report)
    }
}

/// Lower bound on the fitness used for loop-edge information.
pub const MIN_FITNESS: f64 = 1e-4;

/// Default options for pose-graph relaxation.
pub fn pose_graph_options() -> SolverOptions {
    SolverOptions { max_iterations: 30, ..Default::default() }
}

pub fn optimize_pose_graph(graph: &mut PoseGraph) -> Result<SolveReport, SolverError> {
    graph.optimize(&pose_graph_options())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopParams {
    pub radius: f64,
    /// Minimum separation in keyframes between query and candidate.
    pub min_keyframe_gap: usize,
    /// Minimum path length travelled between candidate and query, so that
    /// dense keyframes on a straight run are not mistaken for a revisit.
    pub min_travel: f64,
    pub fitness_gate: f64,
    pub inlier_gate: f64,
    /// Keyframes on each side of the candidate merged into its submap.
    pub submap_half_width: usize,
    pub source_leaf: f64,
    pub target_leaf: f64,
    pub icp: IcpParams,
    /// Optional wider-gate ICP pass run before the regular one.
    pub coarse_correspondence: Option<f64>,
    /// Optional tighter-gate pass after the regular one; it refines the
    /// measured pose only; the acceptance gates use the regular pass.
    pub refine_correspondence: Option<f64>,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            radius: 10.0,
            min_keyframe_gap: 20,
            min_travel: 20.0,
            fitness_gate: 0.3,
            inlier_gate: 0.5,
            submap_half_width: 10,
            source_leaf: 0.2,
            target_leaf: 0.1,
            icp: IcpParams::default(),
            coarse_correspondence: None,
            refine_correspondence: Some(0.3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopCandidate {
    pub query: u64,
    pub candidate: u64,
    pub query_index: usize,
    pub candidate_index: usize,
    /// ICP-initial guess of the query pose (its current graph pose).
    pub init: Pose,
    /// Measured `T_candidate⁻¹ T_query`.
    pub relative: Pose,
    pub fitness: f64,
    pub inlier_ratio: f64,
}

fn cloud_points(cloud: &FeatureCloud) -> Vec<Vec3> {
    cloud.all().map(|f| f.p).collect()
}

/// Looks for a loop between keyframe node `query` and an older keyframe:
/// the spatially nearest one within `radius` whose keyframe distance is at
/// least `min_keyframe_gap`, verified by ICP against its submap.
pub fn detect_loop(graph: &PoseGraph, query: usize, clouds: &HashMap<u64, FeatureCloud>, params: &LoopParams) -> Option<LoopCandidate> {
    let kfs = graph.keyframes();
    let q_ord = kfs.iter().position(|&i| i == query)?;
    if q_ord < params.min_keyframe_gap {
        return None;
    }
    let last_allowed = q_ord - params.min_keyframe_gap;
    let q_pose = graph.node(query).pose;
    // path length from each keyframe up to the query
    let mut travel = vec![0.0; q_ord + 1];
    for o in (0..q_ord).rev() {
        travel[o] = travel[o + 1] + (graph.node(kfs[o + 1]).odometry.t - graph.node(kfs[o]).odometry.t).norm();
    }
    let (c_ord, _) = kfs[..=last_allowed]
        .iter()
        .enumerate()
        .filter(|(o, _)| travel[*o] >= params.min_travel)
        .map(|(o, &i)| (o, (graph.node(i).pose.t - q_pose.t).norm()))
        .filter(|(_, d)| *d <= params.radius)
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    let lo = c_ord.saturating_sub(params.submap_half_width);
    let hi = (c_ord + params.submap_half_width).min(last_allowed);
    let mut target = Vec::new();
    for &i in &kfs[lo..=hi] {
        let n = graph.node(i);
        if let Some(c) = clouds.get(&n.id) {
            target.extend(c.all().map(|f| n.pose.transform_point(&f.p)));
        }
    }
    let thin = |pts: Vec<Vec3>, leaf: f64| if leaf > 0.0 { downsample_voxel(&pts, leaf) } else { pts };
    let target = thin(target, params.target_leaf);
    let source = thin(cloud_points(clouds.get(&graph.node(query).id)?), params.source_leaf);
    let tree = KdTree::build(target);
    let mut init = q_pose;
    if let Some(cap) = params.coarse_correspondence {
        let coarse = IcpParams { max_correspondence: cap, ..params.icp };
        init = icp_align_tree(&source, &tree, &init, &coarse).ok()?.pose;
    }
    let fit = icp_align_tree(&source, &tree, &init, &params.icp).ok()?;
    if fit.fitness >= params.fitness_gate || fit.inlier_ratio <= params.inlier_gate {
        log::debug!("loop rejected: fitness {:.4}, inliers {:.2}", fit.fitness, fit.inlier_ratio);
        return None;
    }
    let pose = match params.refine_correspondence {
        Some(cap) => icp_align_tree(&source, &tree, &fit.pose, &IcpParams { max_correspondence: cap, ..params.icp }).map_or(fit.pose, |r| r.pose),
        None => fit.pose,
    };
    let c_index = kfs[c_ord];
    let c_node = graph.node(c_index);
    Some(LoopCandidate {
        query: graph.node(query).id,
        candidate: c_node.id,
        query_index: query,
        candidate_index: c_index,
        init: q_pose,
        relative: c_node.pose.between(&pose),
        fitness: fit.fitness,
        inlier_ratio: fit.inlier_ratio,
    })
}

/// All keyframe features in the world frame at the graph's current poses,
/// voxel-downsampled with `leaf` (no downsampling when `leaf <= 0`).
pub fn export_global_map(graph: &PoseGraph, clouds: &HashMap<u64, FeatureCloud>, leaf: f64) -> Vec<FeaturePoint> {
    let mut pts = Vec::new();
    for &i in graph.keyframes() {
        let n = graph.node(i);
        if let Some(c) = clouds.get(&n.id) {
            pts.extend(c.all().map(|f| f.transformed(&n.pose)));
        }
    }
    if leaf > 0.0 {
        downsample_voxel(&pts, leaf)
    } else {
        pts
    }
}

/// Rotation-angle part of an edge error, for reporting.
pub fn rotation_error(e: &Tangent6) -> f64 {
    e.fixed_rows::<3>(3).norm()
}

#[cfg(test)]
mod tests;
