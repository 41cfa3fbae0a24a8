//! Per-sweep preprocessing: rotational de-skew, patch-based feature
//! extraction and voxel downsampling.

use crate::geometry::{exp_so3, mean_covariance, sorted_eigen, Quat, Vec3};
use crate::imu::ImuSample;
use crate::scan::{split_sweep, FeatureCloud, FeatureKind, FeaturePoint, Patch, ScanError, ScanPoint, Sweep, PATCH_COLUMNS};
use rayon::prelude::*;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("gyro data does not cover the sweep interval [{0:.6}, {1:.6}]")]
    GyroGap(f64, f64),
    #[error("fewer than three valid points on the line")]
    LineTooSparse,
    #[error(transparent)]
    Scan(#[from] ScanError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams {
    /// Plane test: `λ1/λ2` below this.
    pub plane_ratio: f64,
    /// Edge test: `λ2/λ3` below this.
    pub edge_ratio: f64,
    /// Patches with fewer usable points are skipped.
    pub min_valid: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self { plane_ratio: 0.3, edge_ratio: 0.25, min_valid: 28 }
    }
}

const RATIO_FLOOR: f64 = 1e-12;

/// Body orientation at arbitrary times, from piecewise-constant
/// bias-corrected rates between consecutive gyro samples.
struct AttitudeTrack<'a> {
    samples: &'a [ImuSample],
    at_sample: Vec<Quat>,
    rates: Vec<Vec3>,
}

impl<'a> AttitudeTrack<'a> {
    fn new(samples: &'a [ImuSample], b_g: &Vec3) -> Self {
        let mut at_sample = Vec::with_capacity(samples.len());
        let mut rates = Vec::with_capacity(samples.len());
        let mut q = Quat::identity();
        for (k, s) in samples.iter().enumerate() {
            at_sample.push(q);
            if let Some(next) = samples.get(k + 1) {
                let w = 0.5 * (s.gyro + next.gyro) - b_g;
                rates.push(w);
                q *= exp_so3(&(w * (next.t - s.t)));
            } else {
                rates.push(s.gyro - b_g);
            }
        }
        Self { samples, at_sample, rates }
    }

    fn at(&self, t: f64) -> Quat {
        let k = self.samples.partition_point(|s| s.t <= t).clamp(1, self.samples.len()) - 1;
        self.at_sample[k] * exp_so3(&(self.rates[k] * (t - self.samples[k].t)))
    }
}

/// Rotates every point into the body frame at the sweep-end instant using
/// integrated bias-corrected gyro rates.
pub fn deskew_rotational(w: &Sweep, gyro: &[ImuSample], b_g: &Vec3) -> Result<Sweep, PreprocessError> {
    let (start, end) = (w.start_time, w.end_time());
    if gyro.len() < 2 || gyro[0].t > start + 1e-9 || gyro[gyro.len() - 1].t < end - 1e-9 {
        return Err(PreprocessError::GyroGap(start, end));
    }
    let first = gyro.partition_point(|s| s.t <= start - 0.02).saturating_sub(1);
    let last = (gyro.partition_point(|s| s.t < end + 0.02) + 1).min(gyro.len());
    let track = AttitudeTrack::new(&gyro[first..last], b_g);
    let q_end = track.at(end);
    let mut out = w.clone();
    let mut cached: Option<(f32, Quat)> = None;
    for p in out.points.iter_mut() {
        let rel = match cached {
            Some((t, q)) if t == p.timestamp => q,
            _ => {
                let q = q_end.inverse() * track.at(start + p.timestamp as f64);
                cached = Some((p.timestamp, q));
                q
            }
        };
        if p.valid {
            let v = rel * p.position();
            p.set_position(&v);
        }
    }
    Ok(out)
}

/// Local smoothness of point `index` within its row: the squared norm of the
/// summed differences to the valid points of a symmetric window around it
/// (half-width `min(index, 6 − index)`), normalized by `(count · range)²`.
/// Row ends have an empty window and score zero.
pub fn curvature(line: &[ScanPoint; PATCH_COLUMNS], index: usize) -> Result<f64, PreprocessError> {
    if line.iter().filter(|p| p.is_usable()).count() < 3 {
        return Err(PreprocessError::LineTooSparse);
    }
    let center = &line[index];
    if !center.is_usable() {
        return Ok(0.0);
    }
    let half = index.min(PATCH_COLUMNS - 1 - index);
    let pc = center.position();
    let mut sum = Vec3::zeros();
    let mut count = 0usize;
    for j in index - half..=index + half {
        if j != index && line[j].is_usable() {
            sum += pc - line[j].position();
            count += 1;
        }
    }
    if count < 2 {
        return Ok(0.0);
    }
    let denom = count as f64 * pc.norm();
    Ok(sum.norm_squared() / (denom * denom))
}

fn plane_normal_toward_sensor(n: Vec3, centroid: &Vec3) -> Vec3 {
    if n.dot(centroid) > 0.0 {
        -n
    } else {
        n
    }
}

/// Edge directions point up (z ≥ 0), ties broken by x ≥ 0 then y ≥ 0.
pub fn canonical_direction(d: Vec3) -> Vec3 {
    let flip = if d.z.abs() > 1e-12 {
        d.z < 0.0
    } else if d.x.abs() > 1e-12 {
        d.x < 0.0
    } else {
        d.y < 0.0
    };
    if flip {
        -d
    } else {
        d
    }
}

fn feature(p: &ScanPoint, kind: FeatureKind, nu: Vec3) -> FeaturePoint {
    FeaturePoint { p: p.position(), kind, nu, reflectance: p.reflectance as f64, timestamp: p.timestamp as f64 }
}

/// Outcome of classifying one patch.
#[derive(Debug, Clone, PartialEq)]
pub enum PatchClass {
    Skipped,
    Plane(Vec<FeaturePoint>),
    Edge(Vec<FeaturePoint>),
    Neither,
}

pub fn classify_patch(patch: &Patch, params: &FeatureParams) -> PatchClass {
    let valid: Vec<&ScanPoint> = patch.points().filter(|p| p.is_usable()).collect();
    if valid.len() < params.min_valid.max(3) {
        return PatchClass::Skipped;
    }
    let positions: Vec<Vec3> = valid.iter().map(|p| p.position()).collect();
    let (mean, cov) = mean_covariance(&positions).expect("nonempty");
    let (lambda, vectors) = sorted_eigen(&cov);
    if lambda[1] > RATIO_FLOOR && lambda[0] / lambda[1] < params.plane_ratio {
        let n = plane_normal_toward_sensor(vectors.column(0).normalize(), &mean);
        return PatchClass::Plane(valid.iter().map(|p| feature(p, FeatureKind::Plane, n)).collect());
    }
    let mut picks: Vec<&ScanPoint> = Vec::with_capacity(patch.rows.len());
    for row in &patch.rows {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..PATCH_COLUMNS {
            let Ok(c) = curvature(row, i) else { break };
            if c > 0.0 && best.is_none_or(|(b, _)| c > b) {
                best = Some((c, i));
            }
        }
        if let Some((_, i)) = best {
            picks.push(&row[i]);
        }
    }
    if picks.len() < 3 {
        return PatchClass::Neither;
    }
    let positions: Vec<Vec3> = picks.iter().map(|p| p.position()).collect();
    let (_, cov) = mean_covariance(&positions).expect("nonempty");
    let (lambda, vectors) = sorted_eigen(&cov);
    if lambda[2] > RATIO_FLOOR && lambda[1] / lambda[2] < params.edge_ratio {
        let d = canonical_direction(vectors.column(2).normalize());
        return PatchClass::Edge(picks.iter().map(|p| feature(p, FeatureKind::Edge, d)).collect());
    }
    PatchClass::Neither
}

/// Patch-wise edge/plane extraction. Deterministic and ordered by patch
/// index regardless of the thread pool.
pub fn extract_features(w: &Sweep, params: &FeatureParams) -> Result<FeatureCloud, PreprocessError> {
    let patches = split_sweep(w)?;
    let classes: Vec<PatchClass> = patches.par_iter().map(|p| classify_patch(p, params)).collect();
    let mut cloud = FeatureCloud::default();
    for c in classes {
        match c {
            PatchClass::Plane(v) => cloud.planes.extend(v),
            PatchClass::Edge(v) => cloud.edges.extend(v),
            PatchClass::Skipped | PatchClass::Neither => {}
        }
    }
    Ok(cloud)
}

/// Point types that can be merged per voxel.
pub trait Voxelize: Clone {
    fn position(&self) -> Vec3;
    /// Scalar attributes averaged alongside the position (timestamp,
    /// reflectance).
    fn attributes(&self) -> [f64; 2] {
        [0.0; 2]
    }
    /// Representative at `centroid` with averaged attributes; everything
    /// else comes from `self`.
    fn merged(&self, centroid: Vec3, attributes: [f64; 2]) -> Self;
}

impl Voxelize for Vec3 {
    fn position(&self) -> Vec3 {
        *self
    }
    fn merged(&self, c: Vec3, _: [f64; 2]) -> Self {
        c
    }
}

impl Voxelize for FeaturePoint {
    fn position(&self) -> Vec3 {
        self.p
    }
    fn attributes(&self) -> [f64; 2] {
        [self.timestamp, self.reflectance]
    }
    fn merged(&self, c: Vec3, [timestamp, reflectance]: [f64; 2]) -> Self {
        FeaturePoint { p: c, timestamp, reflectance, ..*self }
    }
}

impl Voxelize for ScanPoint {
    fn position(&self) -> Vec3 {
        ScanPoint::position(self)
    }
    fn attributes(&self) -> [f64; 2] {
        [self.timestamp as f64, self.reflectance as f64]
    }
    fn merged(&self, c: Vec3, [timestamp, reflectance]: [f64; 2]) -> Self {
        let mut p = *self;
        p.set_position(&c);
        p.timestamp = timestamp as f32;
        p.reflectance = reflectance as f32;
        p
    }
}

/// One centroid per occupied voxel of edge length `leaf`, in order of first
/// occupancy. Timestamp and reflectance are averaged too — translational
/// de-skew is linear in time, so it commutes with this merge; other
/// attributes come from the first point seen.
pub fn downsample_voxel<T: Voxelize>(points: &[T], leaf: f64) -> Vec<T> {
    assert!(leaf > 0.0, "voxel leaf must be positive");
    let mut slots: HashMap<(i64, i64, i64), usize> = HashMap::with_capacity(points.len() / 2);
    let mut acc: Vec<(usize, Vec3, [f64; 2], usize)> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let x = p.position();
        if !x.iter().all(|c| c.is_finite()) {
            continue;
        }
        let key = ((x.x / leaf).floor() as i64, (x.y / leaf).floor() as i64, (x.z / leaf).floor() as i64);
        let a = p.attributes();
        match slots.get(&key) {
            Some(&s) => {
                let slot = &mut acc[s];
                slot.1 += x;
                slot.2[0] += a[0];
                slot.2[1] += a[1];
                slot.3 += 1;
            }
            None => {
                slots.insert(key, acc.len());
                acc.push((i, x, a, 1));
            }
        }
    }
    acc.into_iter()
        .map(|(first, sum, a, n)| {
            let n = n as f64;
            points[first].merged(sum / n, [a[0] / n, a[1] / n])
        })
        .collect()
}

/// Downsamples edges and planes with their own leaf sizes.
pub fn downsample_features(cloud: &FeatureCloud, edge_leaf: f64, plane_leaf: f64) -> FeatureCloud {
    FeatureCloud { edges: downsample_voxel(&cloud.edges, edge_leaf), planes: downsample_voxel(&cloud.planes, plane_leaf) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::{Sweep, LINES};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sp(p: Vec3, line: usize, t: f32) -> ScanPoint {
        ScanPoint { p: [p.x as f32, p.y as f32, p.z as f32], reflectance: 50.0, timestamp: t, line: line as u8, valid: true }
    }

    fn patch_from(mut f: impl FnMut(usize, usize) -> Vec3) -> Patch {
        let mut rows = [[ScanPoint::default(); PATCH_COLUMNS]; LINES];
        for (l, row) in rows.iter_mut().enumerate() {
            for (c, p) in row.iter_mut().enumerate() {
                *p = sp(f(l, c), l, c as f32 * 25e-6);
            }
        }
        Patch { rows }
    }

    #[test]
    fn flat_wall_patch_is_all_planes() {
        let patch = patch_from(|l, c| Vec3::new(5.0, -0.3 + 0.05 * c as f64, -0.2 + 0.08 * l as f64));
        match classify_patch(&patch, &FeatureParams::default()) {
            PatchClass::Plane(v) => {
                assert_eq!(v.len(), 42);
                assert!((v[0].nu - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corner_patch_gives_collinear_edges() {
        // two walls x = 5 - |y| meeting in a vertical line at y = 0, columns
        // sweep y; column 3 sits on the corner.
        let patch = patch_from(|l, c| {
            let y = -0.45 + 0.15 * c as f64;
            Vec3::new(5.0 - y.abs(), y, -0.2 + 0.08 * l as f64)
        });
        match classify_patch(&patch, &FeatureParams::default()) {
            PatchClass::Edge(v) => {
                assert_eq!(v.len(), 6);
                for f in &v {
                    assert!((f.p.y).abs() < 1e-6 && (f.p.x - 5.0).abs() < 1e-6);
                    assert!((f.nu - Vec3::z()).norm() < 1e-6);
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn isotropic_blob_has_no_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 0.3).unwrap();
        let patch = patch_from(|_, _| Vec3::new(5.0, 0.0, 0.0) + Vec3::from_fn(|_, _| n.sample(&mut rng)));
        assert_eq!(classify_patch(&patch, &FeatureParams::default()), PatchClass::Neither);
    }

    #[test]
    fn curvature_cases() {
        let straight: [ScanPoint; 7] = std::array::from_fn(|i| sp(Vec3::new(5.0, i as f64 * 0.1, 0.0), 0, 0.0));
        assert!(curvature(&straight, 3).unwrap() < 1e-12);
        let corner: [ScanPoint; 7] = std::array::from_fn(|i| {
            let y = i as f64 * 0.1 - 0.2;
            sp(Vec3::new(5.0 - y.abs(), y, 0.0), 0, 0.0)
        });
        let c: Vec<f64> = (0..7).map(|i| curvature(&corner, i).unwrap()).collect();
        for (i, v) in c.iter().enumerate() {
            if i != 2 {
                assert!(c[2] > *v, "{c:?}");
            }
        }
        let mut sparse = straight;
        for p in sparse.iter_mut().skip(2) {
            p.valid = false;
        }
        assert_eq!(curvature(&sparse, 0), Err(PreprocessError::LineTooSparse));
    }

    fn gyro(rate: Vec3, t0: f64, t1: f64) -> Vec<ImuSample> {
        let n = ((t1 - t0) * 200.0).round() as usize;
        (0..=n).map(|k| ImuSample { t: t0 + k as f64 / 200.0, acc: Vec3::zeros(), gyro: rate }).collect()
    }

    fn one_point_sweep(t: f32) -> Sweep {
        let mut points = Vec::new();
        for c in 0..2 {
            for l in 0..LINES {
                points.push(sp(Vec3::new(5.0, 0.0, 0.0), l, if c == 0 { 0.0 } else { t }));
            }
        }
        Sweep { points, columns: 2, start_time: 1.0 }
    }

    #[test]
    fn deskew_zero_rate_is_identity() {
        let w = one_point_sweep(0.05);
        let out = deskew_rotational(&w, &gyro(Vec3::zeros(), 0.5, 1.5), &Vec3::zeros()).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn deskew_constant_rate() {
        let w = one_point_sweep(0.05);
        let out = deskew_rotational(&w, &gyro(Vec3::new(0.0, 0.0, 1.0), 0.5, 1.5), &Vec3::zeros()).unwrap();
        let p0 = out.points[0].position();
        let angle = p0.y.atan2(p0.x);
        assert!((angle + 0.1).abs() < 1e-6, "{angle}");
        let p1 = out.points[6].position();
        assert!((p1.y.atan2(p1.x) + 0.05).abs() < 1e-6);
        // bias equal to the rate cancels it
        let out = deskew_rotational(&w, &gyro(Vec3::new(0.0, 0.0, 1.0), 0.5, 1.5), &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((out.points[0].position() - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-6);
        assert!(matches!(
            deskew_rotational(&w, &gyro(Vec3::zeros(), 1.02, 1.5), &Vec3::zeros()),
            Err(PreprocessError::GyroGap(..))
        ));
    }

    #[test]
    fn voxel_cases() {
        let pts = vec![Vec3::new(0.1, 0.1, 0.1), Vec3::new(0.2, 0.2, 0.2), Vec3::new(0.3, 0.1, 0.2)];
        let out = downsample_voxel(&pts, 1.0);
        assert_eq!(out.len(), 1);
        assert!((out[0] - Vec3::new(0.2, 0.4 / 3.0, 0.5 / 3.0)).norm() < 1e-12);
        let grid: Vec<Vec3> = (0..27).map(|i| Vec3::new((i % 3) as f64, ((i / 3) % 3) as f64, (i / 9) as f64)).collect();
        assert_eq!(downsample_voxel(&grid, 0.5).len(), 27);
    }
}
