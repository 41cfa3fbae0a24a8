//! File formats: binary scan files, IMU CSV, TUM trajectories, binary PLY.

use crate::geometry::{Pose, Quat, Vec3};
use crate::imu::ImuSample;
use crate::scan::{ScanPoint, Sweep, LINES};
use nalgebra::Quaternion;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl IoError {
    fn format(path: &Path, msg: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), msg: msg.into() }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| IoError::Io { path: path.to_path_buf(), source }
    }
}

pub const SCAN_MAGIC: &[u8; 4] = b"LIOS";
pub const SCAN_VERSION: u32 = 1;
const SCAN_HEADER: usize = 4 + 4 + 4 + 8;
const SCAN_POINT: usize = 4 * 5 + 4;

pub fn encode_scan(w: &Sweep) -> Vec<u8> {
    let mut out = Vec::with_capacity(SCAN_HEADER + w.points.len() * SCAN_POINT);
    out.extend_from_slice(SCAN_MAGIC);
    out.extend_from_slice(&SCAN_VERSION.to_le_bytes());
    out.extend_from_slice(&(w.columns as u32).to_le_bytes());
    out.extend_from_slice(&w.start_time.to_le_bytes());
    for p in &w.points {
        for v in [p.p[0], p.p[1], p.p[2], p.reflectance, p.timestamp] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&[p.line, p.valid as u8, 0, 0]);
    }
    out
}

/// Decodes and validates one scan file's contents; `path` is only used in
/// error messages.
pub fn decode_scan(bytes: &[u8], path: &Path) -> Result<Sweep, IoError> {
    if bytes.len() < SCAN_HEADER {
        return Err(IoError::format(path, "truncated header"));
    }
    if &bytes[0..4] != SCAN_MAGIC {
        return Err(IoError::format(path, "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != SCAN_VERSION {
        return Err(IoError::format(path, format!("unsupported version {version}")));
    }
    let columns = u32_at(8) as usize;
    let start_time = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let n = columns * LINES;
    if bytes.len() != SCAN_HEADER + n * SCAN_POINT {
        return Err(IoError::format(path, format!("expected {} bytes for {columns} columns, got {}", SCAN_HEADER + n * SCAN_POINT, bytes.len())));
    }
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let o = SCAN_HEADER + k * SCAN_POINT;
        let valid = match bytes[o + 21] {
            0 => false,
            1 => true,
            v => return Err(IoError::format(path, format!("point {k}: valid flag {v}"))),
        };
        points.push(ScanPoint {
            p: [f32_at(o), f32_at(o + 4), f32_at(o + 8)],
            reflectance: f32_at(o + 12),
            timestamp: f32_at(o + 16),
            line: bytes[o + 20],
            valid,
        });
    }
    let w = Sweep { points, columns, start_time };
    w.validate().map_err(|e| IoError::format(path, e.to_string()))?;
    Ok(w)
}

pub fn write_scan(path: &Path, w: &Sweep) -> Result<(), IoError> {
    fs::write(path, encode_scan(w)).map_err(IoError::io(path))
}

pub fn read_scan(path: &Path) -> Result<Sweep, IoError> {
    let bytes = fs::read(path).map_err(IoError::io(path))?;
    decode_scan(&bytes, path)
}

pub const SCAN_EXTENSION: &str = "lios";

/// Scan file name for sweep `k` (sorts in sweep order).
pub fn scan_file_name(k: usize) -> String {
    format!("scan_{k:06}.{SCAN_EXTENSION}")
}

/// Reads every `*.lios` file of a directory in file-name order.
pub fn read_scan_dir(dir: &Path) -> Result<Vec<Sweep>, IoError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(IoError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == SCAN_EXTENSION))
        .collect();
    files.sort();
    files.iter().map(|p| read_scan(p)).collect()
}

pub const IMU_HEADER: &str = "t,ax,ay,az,gx,gy,gz";

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(IoError::io(path))?;
    let mut w = BufWriter::new(f);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{IMU_HEADER}")?;
        for s in samples {
            writeln!(w, "{},{},{},{},{},{},{}", s.t, s.acc.x, s.acc.y, s.acc.z, s.gyro.x, s.gyro.y, s.gyro.z)?;
        }
        w.flush()
    };
    body().map_err(IoError::io(path))
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>, IoError> {
    let f = fs::File::open(path).map_err(IoError::io(path))?;
    let mut lines = BufReader::new(f).lines();
    let header = lines.next().transpose().map_err(IoError::io(path))?.unwrap_or_default();
    if header.trim() != IMU_HEADER {
        return Err(IoError::format(path, format!("expected header \"{IMU_HEADER}\"")));
    }
    let mut out: Vec<ImuSample> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(IoError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::format(path, format!("line {}: {e}", i + 2)))?;
        if v.len() != 7 || !v.iter().all(|x| x.is_finite()) {
            return Err(IoError::format(path, format!("line {}: expected 7 finite values", i + 2)));
        }
        if out.last().is_some_and(|p| p.t >= v[0]) {
            return Err(IoError::format(path, format!("line {}: timestamps must increase", i + 2)));
        }
        out.push(ImuSample { t: v[0], acc: Vec3::new(v[1], v[2], v[3]), gyro: Vec3::new(v[4], v[5], v[6]) });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedPose {
    pub time: f64,
    pub pose: Pose,
}

/// Per-frame poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub poses: Vec<StampedPose>,
}

impl TrajectoryRecord {
    pub fn new(poses: Vec<StampedPose>) -> Result<Self, String> {
        if let Some(w) = poses.windows(2).find(|w| w[1].time <= w[0].time) {
            return Err(format!("timestamps not increasing at {}", w[1].time));
        }
        Ok(Self { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// `v` with `digits` significant digits, positional when reasonable.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-5..digits as i32).contains(&exp) {
        return sci;
    }
    let neg = mantissa.starts_with('-');
    let d: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let mut s = if exp >= 0 {
        let e = exp as usize + 1;
        format!("{}.{}", &d[..e], &d[e..])
    } else {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), d)
    };
    if s.contains('.') {
        s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    if neg {
        s.insert(0, '-');
    }
    s
}

pub const TUM_DIGITS: usize = 9;

pub fn format_tum(traj: &TrajectoryRecord) -> String {
    let mut out = String::new();
    for s in &traj.poses {
        let (t, q) = (&s.pose.t, s.pose.q.quaternion());
        let fields = [s.time, t.x, t.y, t.z, q.i, q.j, q.k, q.w];
        let line: Vec<String> = fields.iter().map(|v| format_significant(*v, TUM_DIGITS)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_tum(path: &Path, traj: &TrajectoryRecord) -> Result<(), IoError> {
    fs::write(path, format_tum(traj)).map_err(IoError::io(path))
}

/// Parses TUM text; `#` comments and blank lines are skipped. Quaternions
/// are taken as written (not renormalized).
pub fn parse_tum(text: &str, path: &Path) -> Result<TrajectoryRecord, IoError> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::format(path, format!("line {}: {e}", i + 1)))?;
        if v.len() != 8 {
            return Err(IoError::format(path, format!("line {}: expected 8 fields, got {}", i + 1, v.len())));
        }
        let q = Quat::new_unchecked(Quaternion::new(v[7], v[4], v[5], v[6]));
        poses.push(StampedPose { time: v[0], pose: Pose::new(Vec3::new(v[1], v[2], v[3]), q) });
    }
    TrajectoryRecord::new(poses).map_err(|m| IoError::format(path, m))
}

pub fn read_tum(path: &Path) -> Result<TrajectoryRecord, IoError> {
    let text = fs::read_to_string(path).map_err(IoError::io(path))?;
    parse_tum(&text, path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub p: [f32; 3],
    pub reflectance: f32,
}

fn ply_header(n: usize) -> String {
    format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {n}\nproperty float x\nproperty float y\nproperty float z\nproperty float reflectance\nend_header\n"
    )
}

pub fn encode_ply(points: &[MapPoint]) -> Vec<u8> {
    let mut out = ply_header(points.len()).into_bytes();
    for p in points {
        for v in [p.p[0], p.p[1], p.p[2], p.reflectance] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_ply(path: &Path, points: &[MapPoint]) -> Result<(), IoError> {
    fs::write(path, encode_ply(points)).map_err(IoError::io(path))
}

/// Reads PLY files in the layout written by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<Vec<MapPoint>, IoError> {
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(IoError::io(path))?;
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| IoError::format(path, "missing end_header"))?
        + END.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| IoError::format(path, "header is not UTF-8"))?;
    let n: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| IoError::format(path, "missing vertex count"))?;
    if header != ply_header(n) {
        return Err(IoError::format(path, "unsupported PLY layout"));
    }
    let body = &bytes[end..];
    if body.len() != n * 16 {
        return Err(IoError::format(path, format!("expected {} data bytes, got {}", n * 16, body.len())));
    }
    let f = |o: usize| f32::from_le_bytes(body[o..o + 4].try_into().unwrap());
    Ok((0..n).map(|k| MapPoint { p: [f(16 * k), f(16 * k + 4), f(16 * k + 8)], reflectance: f(16 * k + 12) }).collect())
}
