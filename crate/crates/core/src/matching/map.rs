//! Ring buffer of posed feature clouds with one k-d tree per feature kind.

use crate::geometry::{Pose, Vec3};
use crate::kdtree::{KdTree, Neighbor};
use crate::scan::{FeatureCloud, FeatureKind, FeaturePoint};
use std::collections::VecDeque;

#[derive(Debug, Clone)]
struct Frame {
    id: u64,
    pose: Pose,
    local: FeatureCloud,
}

#[derive(Debug, Clone, Default)]
struct KindIndex {
    points: Vec<FeaturePoint>,
    source: Vec<u64>,
    tree: KdTree,
}

impl KindIndex {
    fn build(frames: &VecDeque<Frame>, kind: FeatureKind) -> Self {
        let mut points = Vec::new();
        let mut source = Vec::new();
        for f in frames {
            let list = match kind {
                FeatureKind::Edge => &f.local.edges,
                FeatureKind::Plane => &f.local.planes,
            };
            for p in list {
                points.push(p.transformed(&f.pose));
                source.push(f.id);
            }
        }
        let tree = KdTree::build(points.iter().map(|p| p.p).collect());
        Self { points, source, tree }
    }
}

/// World-frame feature map over the most recent `width` frames.
#[derive(Debug, Clone)]
pub struct LocalFeatureMap {
    width: usize,
    frames: VecDeque<Frame>,
    edges: KindIndex,
    planes: KindIndex,
}

impl LocalFeatureMap {
    pub fn new(width: usize) -> Self {
        assert!(width > 0, "map width must be positive");
        Self { width, frames: VecDeque::new(), edges: KindIndex::default(), planes: KindIndex::default() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.frames.iter().map(|f| f.id)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.frames.iter().any(|f| f.id == id)
    }

    /// Adds a frame (features in its local frame) and rebuilds the indices.
    pub fn insert(&mut self, id: u64, pose: Pose, local: FeatureCloud) {
        self.push(id, pose, local);
        self.rebuild();
    }

    /// Adds a frame without rebuilding; call [`LocalFeatureMap::rebuild`] after the batch.
    pub fn push(&mut self, id: u64, pose: Pose, local: FeatureCloud) {
        self.frames.push_back(Frame { id, pose, local });
        while self.frames.len() > self.width {
            self.frames.pop_front();
        }
    }

    /// Moves a frame to a new pose; takes effect at the next rebuild.
    pub fn set_pose(&mut self, id: u64, pose: Pose) -> bool {
        match self.frames.iter_mut().find(|f| f.id == id) {
            Some(f) => {
                f.pose = pose;
                true
            }
            None => false,
        }
    }

    pub fn pose_of(&self, id: u64) -> Option<Pose> {
        self.frames.iter().find(|f| f.id == id).map(|f| f.pose)
    }

    /// Re-poses every frame for which `corrected` returns a pose, then rebuilds.
    pub fn rebuild_with_poses(&mut self, corrected: impl Fn(u64) -> Option<Pose>) {
        for f in self.frames.iter_mut() {
            if let Some(p) = corrected(f.id) {
                f.pose = p;
            }
        }
        self.rebuild();
    }

    pub fn rebuild(&mut self) {
        self.edges = KindIndex::build(&self.frames, FeatureKind::Edge);
        self.planes = KindIndex::build(&self.frames, FeatureKind::Plane);
    }

    fn index(&self, kind: FeatureKind) -> &KindIndex {
        match kind {
            FeatureKind::Edge => &self.edges,
            FeatureKind::Plane => &self.planes,
        }
    }

    pub fn len(&self, kind: FeatureKind) -> usize {
        self.index(kind).points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.points.is_empty() && self.planes.points.is_empty()
    }

    pub fn points(&self, kind: FeatureKind) -> &[FeaturePoint] {
        &self.index(kind).points
    }

    pub fn point(&self, kind: FeatureKind, index: usize) -> &FeaturePoint {
        &self.index(kind).points[index]
    }

    /// `k` nearest map points within `radius`, skipping points contributed
    /// by frame `exclude`.
    pub fn knn(&self, kind: FeatureKind, q: &Vec3, k: usize, radius: f64, exclude: Option<u64>) -> Vec<Neighbor> {
        let idx = self.index(kind);
        let Some(ex) = exclude else {
            return idx.tree.knn(q, k, radius);
        };
        let mut want = k + 16;
        loop {
            let found = idx.tree.knn(q, want, radius);
            let exhausted = found.len() < want;
            let kept: Vec<Neighbor> = found.into_iter().filter(|n| idx.source[n.index] != ex).take(k).collect();
            if kept.len() == k || exhausted || want >= idx.points.len() {
                return kept;
            }
            want = (want * 4).min(idx.points.len());
        }
    }

    /// Closest map point of either kind.
    pub fn nearest_any(&self, q: &Vec3, radius: f64) -> Option<Neighbor> {
        let a = self.edges.tree.nearest(q, radius);
        let b = self.planes.tree.nearest(q, radius);
        match (a, b) {
            (Some(a), Some(b)) => Some(if b.dist_sq < a.dist_sq { b } else { a }),
            (a, b) => a.or(b),
        }
    }

    /// All map points of both kinds in world coordinates.
    pub fn all_points(&self) -> impl Iterator<Item = &FeaturePoint> {
        self.edges.points.iter().chain(self.planes.points.iter())
    }
}
