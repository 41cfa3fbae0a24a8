//! Static 3-D k-d tree for k-nearest-neighbor queries.
//!
//! Nodes are stored implicitly: a subtree over `order[lo..hi]` keeps its
//! splitting point at `mid = (lo + hi) / 2`, split on the axis of largest
//! spread. Ties in distance are broken by point index so results are
//! deterministic.

use crate::geometry::Vec3;

#[derive(Debug, Clone, Default)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<u32>,
    axes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl KdTree {
    pub fn build(points: Vec<Vec3>) -> Self {
        let n = points.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut axes = vec![0u8; n];
        build_recursive(&points, &mut order, &mut axes, 0, n);
        Self { points, order, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vec3 {
        &self.points[index]
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Up to `k` nearest neighbors within `max_dist`, closest first.
    pub fn knn(&self, query: &Vec3, k: usize, max_dist: f64) -> Vec<Neighbor> {
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return best;
        }
        let mut bound = max_dist * max_dist;
        self.search(query, k, 0, self.points.len(), &mut best, &mut bound);
        best
    }

    pub fn nearest(&self, query: &Vec3, max_dist: f64) -> Option<Neighbor> {
        self.knn(query, 1, max_dist).into_iter().next()
    }

    fn search(&self, q: &Vec3, k: usize, lo: usize, hi: usize, best: &mut Vec<Neighbor>, bound: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid] as usize;
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        if d2 <= *bound {
            insert_sorted(best, Neighbor { index: idx, dist_sq: d2 }, k);
            if best.len() == k {
                *bound = bound.min(best[k - 1].dist_sq);
            }
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, k, near.0, near.1, best, bound);
        if diff * diff <= *bound {
            self.search(q, k, far.0, far.1, best, bound);
        }
    }
}

fn insert_sorted(best: &mut Vec<Neighbor>, n: Neighbor, k: usize) {
    let pos = best
        .iter()
        .position(|b| n.dist_sq < b.dist_sq || (n.dist_sq == b.dist_sq && n.index < b.index))
        .unwrap_or(best.len());
    if pos < k {
        best.insert(pos, n);
        best.truncate(k);
    }
}

fn build_recursive(points: &[Vec3], order: &mut [u32], axes: &mut [u8], lo: usize, hi: usize) {
    if hi - lo <= 1 {
        return;
    }
    let slice = &mut order[lo..hi];
    let mut min = Vec3::repeat(f64::INFINITY);
    let mut max = Vec3::repeat(f64::NEG_INFINITY);
    for &i in slice.iter() {
        let p = &points[i as usize];
        min = min.inf(p);
        max = max.sup(p);
    }
    let spread = max - min;
    let axis = spread.imax();
    let mid_local = (hi - lo) / 2;
    slice.select_nth_unstable_by(mid_local, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let mid = lo + mid_local;
    axes[mid] = axis as u8;
    build_recursive(points, order, axes, lo, mid);
    build_recursive(points, order, axes, mid + 1, hi);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vec3], q: &Vec3, k: usize, r: f64) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .filter(|(d, _)| *d <= r * r)
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(k).map(|x| x.1).collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-2.0..2.0)))
            .collect();
        let tree = KdTree::build(pts.clone());
        for _ in 0..200 {
            let q = Vec3::new(rng.random_range(-11.0..11.0), rng.random_range(-11.0..11.0), rng.random_range(-3.0..3.0));
            for (k, r) in [(1, 100.0), (5, 1.0), (5, 100.0), (10, 2.5)] {
                let got: Vec<usize> = tree.knn(&q, k, r).iter().map(|n| n.index).collect();
                assert_eq!(got, brute(&pts, &q, k, r));
            }
        }
    }

    #[test]
    fn empty_and_duplicates() {
        let tree = KdTree::build(vec![]);
        assert!(tree.knn(&Vec3::zeros(), 3, 1.0).is_empty());
        let tree = KdTree::build(vec![Vec3::zeros(); 7]);
        let got: Vec<usize> = tree.knn(&Vec3::zeros(), 5, 1.0).iter().map(|n| n.index).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
    }
}
