//! Point, sweep and feature data model.
//!
//! A sweep is stored column-major: every column holds exactly one reading per
//! laser line (six lines, fired simultaneously), and columns are ordered by
//! time. Feature extraction works on 6x7 patches cut from consecutive columns.

use crate::geometry::{Pose, Vec3};
use thiserror::Error;

pub const LINES: usize = 6;
pub const PATCH_COLUMNS: usize = 7;
pub const PATCH_POINTS: usize = LINES * PATCH_COLUMNS;
/// Sweep duration at 10 Hz.
pub const SWEEP_PERIOD: f64 = 0.1;
pub const MIN_RANGE: f64 = 0.5;
pub const MAX_RANGE: f64 = 120.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanError {
    #[error("malformed sweep: {0}")]
    MalformedSweep(String),
}

/// A single LiDAR reading. Stored in single precision, as delivered by the
/// sensor and as written to scan files.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScanPoint {
    pub p: [f32; 3],
    pub reflectance: f32,
    /// Seconds since sweep start.
    pub timestamp: f32,
    pub line: u8,
    pub valid: bool,
}

impl ScanPoint {
    pub fn position(&self) -> Vec3 {
        Vec3::new(self.p[0] as f64, self.p[1] as f64, self.p[2] as f64)
    }

    pub fn set_position(&mut self, p: &Vec3) {
        self.p = [p.x as f32, p.y as f32, p.z as f32];
    }

    /// Readings flagged invalid, non-finite, or outside the sensor range
    /// limits are excluded from all geometry.
    pub fn is_usable(&self) -> bool {
        if !self.valid || !self.p.iter().all(|c| c.is_finite()) {
            return false;
        }
        let r = self.position().norm();
        (MIN_RANGE..=MAX_RANGE).contains(&r)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sweep {
    pub points: Vec<ScanPoint>,
    pub columns: usize,
    /// Absolute time of the first column, seconds.
    pub start_time: f64,
}

impl Sweep {
    pub fn end_time(&self) -> f64 {
        self.start_time + SWEEP_PERIOD
    }

    pub fn column(&self, c: usize) -> &[ScanPoint] {
        &self.points[c * LINES..(c + 1) * LINES]
    }

    /// Checks the column layout: `columns × 6` points, line `l` at slot `l`
    /// of every column, shared nondecreasing column timestamps.
    pub fn validate(&self) -> Result<(), ScanError> {
        if self.points.len() != self.columns * LINES {
            return Err(ScanError::MalformedSweep(format!(
                "{} points for {} columns",
                self.points.len(),
                self.columns
            )));
        }
        let mut last = f32::NEG_INFINITY;
        for c in 0..self.columns {
            let col = self.column(c);
            let t = col[0].timestamp;
            for (l, p) in col.iter().enumerate() {
                if p.line as usize != l {
                    return Err(ScanError::MalformedSweep(format!("column {c} slot {l} holds line {}", p.line)));
                }
                if p.timestamp != t {
                    return Err(ScanError::MalformedSweep(format!("column {c} has mixed timestamps")));
                }
            }
            if !(t >= last) {
                return Err(ScanError::MalformedSweep(format!("column {c} goes back in time")));
            }
            last = t;
        }
        Ok(())
    }
}

/// 6 lines × 7 columns of consecutive readings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    /// `rows[line][column]`
    pub rows: [[ScanPoint; PATCH_COLUMNS]; LINES],
}

impl Patch {
    pub fn points(&self) -> impl Iterator<Item = &ScanPoint> {
        self.rows.iter().flat_map(|r| r.iter())
    }

    pub fn valid_count(&self) -> usize {
        self.points().filter(|p| p.is_usable()).count()
    }

    pub fn min_timestamp(&self) -> f32 {
        self.points().map(|p| p.timestamp).fold(f32::INFINITY, f32::min)
    }

    pub fn max_timestamp(&self) -> f32 {
        self.points().map(|p| p.timestamp).fold(f32::NEG_INFINITY, f32::max)
    }
}

/// Cuts a sweep into non-overlapping 6x7 patches in time order. Trailing
/// columns that do not fill a patch are dropped.
pub fn split_sweep(w: &Sweep) -> Result<Vec<Patch>, ScanError> {
    w.validate()?;
    let n = w.columns / PATCH_COLUMNS;
    let patches = (0..n)
        .map(|i| {
            let mut rows = [[ScanPoint::default(); PATCH_COLUMNS]; LINES];
            for c in 0..PATCH_COLUMNS {
                let col = w.column(i * PATCH_COLUMNS + c);
                for l in 0..LINES {
                    rows[l][c] = col[l];
                }
            }
            Patch { rows }
        })
        .collect();
    Ok(patches)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Edge,
    Plane,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePoint {
    pub p: Vec3,
    pub kind: FeatureKind,
    /// Edge direction or plane normal, unit length, same frame as `p`.
    pub nu: Vec3,
    pub reflectance: f64,
    pub timestamp: f64,
}

impl FeaturePoint {
    pub fn transformed(&self, pose: &Pose) -> FeaturePoint {
        FeaturePoint { p: pose.transform_point(&self.p), nu: pose.q * self.nu, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureCloud {
    pub edges: Vec<FeaturePoint>,
    pub planes: Vec<FeaturePoint>,
}

impl FeatureCloud {
    pub fn len(&self) -> usize {
        self.edges.len() + self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.planes.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> FeatureCloud {
        FeatureCloud {
            edges: self.edges.iter().map(|f| f.transformed(pose)).collect(),
            planes: self.planes.iter().map(|f| f.transformed(pose)).collect(),
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &FeaturePoint> {
        self.edges.iter().chain(self.planes.iter())
    }
}
