//! End-to-end odometry and mapping: preprocessing, frontend and backend run
//! as concurrent stages connected by bounded channels; loop closure runs on
//! finalized keyframes inside the backend stage.

pub mod frontend;

use crate::backend::{Backend, BackendError, FinalizedFrame, FrameInput};
use crate::config::{Mode, PipelineConfig};
use crate::geometry::{gravity_alignment, KeyframeState, Pose, Quat, Vec3};
use crate::imu::ImuSample;
use crate::io::{read_imu_csv, read_scan_dir, IoError, MapPoint, StampedPose, TrajectoryRecord};
use crate::loop_closure::{detect_loop, export_global_map, optimize_pose_graph, PoseGraph};
use crate::preprocess::{deskew_rotational, downsample_features, extract_features, PreprocessError};
use crate::scan::{FeatureCloud, Sweep};
use frontend::Frontend;
use std::collections::HashMap;
use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::Arc;

const CHANNEL_DEPTH: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("input format: {0}")]
    InputFormat(String),
    #[error("tracking lost at frame {frame}")]
    TrackingLost { frame: u64, partial: Box<PipelineOutput> },
    #[error("invalid configuration: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("preprocessing frame {frame}: {source}")]
    Preprocess { frame: u64, source: PreprocessError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopRecord {
    pub query: u64,
    pub candidate: u64,
    pub fitness: f64,
    /// Measured query pose relative to the candidate.
    pub relative: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    pub frames: usize,
    pub keyframes: usize,
    pub frontend_failures: usize,
    pub backend_failures: usize,
    pub loops: Vec<LoopRecord>,
    pub stationary_start: bool,
    pub initial_gyro_bias: Vec3,
    pub tracking_lost: Option<u64>,
}

impl RunReport {
    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            Mode::Full => "full",
            Mode::NoImu => "no-imu",
            Mode::DeadReckoning => "dead-reckoning",
        };
        s += &format!("mode={mode}\nseed={}\nframes={}\nkeyframes={}\n", self.seed, self.frames, self.keyframes);
        s += &format!("frontend_failures={}\nbackend_failures={}\n", self.frontend_failures, self.backend_failures);
        s += &format!("stationary_start={}\n", self.stationary_start);
        let b = self.initial_gyro_bias;
        s += &format!("initial_gyro_bias={} {} {}\n", b.x, b.y, b.z);
        s += &format!("loops={}\n", self.loops.len());
        for l in &self.loops {
            s += &format!("loop={} {} {}\n", l.query, l.candidate, l.fitness);
        }
        if let Some(f) = self.tracking_lost {
            s += &format!("tracking_lost={f}\n");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Final (loop-corrected) pose of every frame at its sweep end time.
    pub trajectory: TrajectoryRecord,
    /// Finalized odometry before loop closure.
    pub odometry: TrajectoryRecord,
    pub map: Vec<MapPoint>,
    pub report: RunReport,
}

/// Initial attitude and gyro bias from a stationary start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticInit {
    pub orientation: Quat,
    pub gyro_bias: Vec3,
    pub stationary: bool,
}

/// Gravity-aligns the first `duration` seconds of accelerometer data. The
/// gyro mean is taken as bias only if the platform looks stationary.
pub fn static_initialization(imu: &[ImuSample], t0: f64, duration: f64, gravity: f64) -> StaticInit {
    let window: Vec<&ImuSample> = imu.iter().filter(|s| s.t >= t0 && s.t <= t0 + duration).collect();
    if window.is_empty() {
        return StaticInit { orientation: Quat::identity(), gyro_bias: Vec3::zeros(), stationary: false };
    }
    let n = window.len() as f64;
    let acc = window.iter().map(|s| s.acc).sum::<Vec3>() / n;
    let gyro = window.iter().map(|s| s.gyro).sum::<Vec3>() / n;
    let acc_spread = window.iter().map(|s| (s.acc - acc).norm_squared()).sum::<f64>() / n;
    let stationary = (acc.norm() - gravity).abs() < 0.3 && acc_spread.sqrt() < 0.5 && gyro.norm() < 0.05;
    StaticInit {
        orientation: gravity_alignment(&acc),
        gyro_bias: if stationary { gyro } else { Vec3::zeros() },
        stationary,
    }
}

/// Checks what the stages assume about their inputs.
pub fn validate_inputs(sweeps: &[Sweep], imu: &[ImuSample]) -> Result<(), PipelineError> {
    let (Some(first), Some(last)) = (sweeps.first(), sweeps.last()) else {
        return Err(PipelineError::InputFormat("no scans".into()));
    };
    for (k, w) in sweeps.iter().enumerate() {
        w.validate().map_err(|e| PipelineError::InputFormat(format!("scan {k}: {e}")))?;
        if k > 0 && w.start_time <= sweeps[k - 1].start_time {
            return Err(PipelineError::InputFormat(format!("scan {k}: start time not increasing")));
        }
    }
    if imu.windows(2).any(|p| p[1].t <= p[0].t) {
        return Err(PipelineError::InputFormat("IMU timestamps not increasing".into()));
    }
    let need = (first.start_time, last.end_time());
    match (imu.first(), imu.last()) {
        (Some(a), Some(b)) if a.t <= need.0 && b.t >= need.1 => Ok(()),
        (Some(a), Some(b)) => {
            let gap = if a.t > need.0 { (need.0, a.t) } else { (b.t, need.1) };
            Err(PipelineError::InputFormat(format!(
                "IMU data covers [{}, {}] but scans span [{}, {}]; uncovered interval [{}, {}]",
                a.t, b.t, need.0, need.1, gap.0, gap.1
            )))
        }
        _ => Err(PipelineError::InputFormat(format!("no IMU data; scans span [{}, {}]", need.0, need.1))),
    }
}

/// Loads a directory of scan files and an IMU CSV.
pub fn load_inputs(scans: &Path, imu: &Path) -> Result<(Vec<Sweep>, Vec<ImuSample>), PipelineError> {
    Ok((read_scan_dir(scans)?, read_imu_csv(imu)?))
}

fn gyro_slice(imu: &[ImuSample], t0: f64, t1: f64) -> &[ImuSample] {
    let a = imu.partition_point(|s| s.t <= t0).saturating_sub(1);
    let b = (imu.partition_point(|s| s.t < t1) + 1).min(imu.len());
    &imu[a..b]
}

struct Preprocessed {
    id: u64,
    time: f64,
    features: FeatureCloud,
}

fn preprocess_stage(config: &PipelineConfig, sweeps: &[Sweep], imu: &[ImuSample], b_g: Vec3, tx: SyncSender<Result<Preprocessed, PipelineError>>) {
    let extrinsic = config.extrinsic();
    let params = config.feature_params();
    let identity = extrinsic == Pose::identity();
    for (k, w) in sweeps.iter().enumerate() {
        let id = k as u64;
        let result = (|| {
            let mut w = w.clone();
            if !identity {
                for p in w.points.iter_mut() {
                    p.set_position(&extrinsic.transform_point(&p.position()));
                }
            }
            let w = deskew_rotational(&w, gyro_slice(imu, w.start_time, w.end_time()), &b_g)?;
            let cloud = extract_features(&w, &params)?;
            Ok(Preprocessed { id, time: w.end_time(), features: downsample_features(&cloud, config.edge_leaf, config.plane_leaf) })
        })()
        .map_err(|source| PipelineError::Preprocess { frame: id, source });
        let stop = result.is_err();
        if tx.send(result).is_err() || stop {
            return;
        }
    }
}

enum FrontendMessage {
    Frame(FrameInput, bool),
    Lost(u64),
    Failed(PipelineError),
}

fn frontend_stage(mut frontend: Frontend, max_lost: usize, rx: Receiver<Result<Preprocessed, PipelineError>>, tx: SyncSender<FrontendMessage>) {
    for msg in rx {
        let msg = match msg {
            Ok(m) => m,
            Err(e) => {
                let _ = tx.send(FrontendMessage::Failed(e));
                return;
            }
        };
        let f = frontend.process(msg.id, msg.time, &msg.features);
        if let Some(e) = &f.failure {
            log::warn!("frame {}: {e}", f.id);
        }
        if frontend.consecutive_failures() > max_lost {
            let _ = tx.send(FrontendMessage::Lost(f.id));
            return;
        }
        let input = FrameInput { id: f.id, time: f.time, frontend_pose: f.pose, is_keyframe: f.is_keyframe, features: f.features };
        if tx.send(FrontendMessage::Frame(input, f.failure.is_some())).is_err() {
            return;
        }
    }
}

/// Applies a constant extra yaw to every odometry increment.
struct DriftInjector {
    per_frame: Quat,
    last: Option<(Pose, Pose)>,
}

impl DriftInjector {
    fn new(yaw: f64) -> Self {
        Self { per_frame: Quat::from_axis_angle(&Vec3::z_axis(), yaw), last: None }
    }

    fn apply(&mut self, pose: Pose) -> Pose {
        let out = match self.last {
            None => pose,
            Some((raw, drifted)) => {
                let rel = raw.between(&pose);
                drifted.compose(&Pose::new(rel.t, self.per_frame * rel.q))
            }
        };
        self.last = Some((pose, out));
        out
    }
}

/// Odometry finalization, pose graph and loop closure.
struct Mapper<'a> {
    config: &'a PipelineConfig,
    graph: PoseGraph,
    clouds: HashMap<u64, FeatureCloud>,
    drift: DriftInjector,
    odometry: Vec<StampedPose>,
    loops: Vec<LoopRecord>,
    cooldown: usize,
    loop_closure: bool,
}

impl<'a> Mapper<'a> {
    fn new(config: &'a PipelineConfig) -> Self {
        Self {
            config,
            graph: PoseGraph::new(config.graph_sigma_t, config.graph_sigma_r),
            clouds: HashMap::new(),
            drift: DriftInjector::new(config.drift_yaw_per_frame),
            odometry: Vec::new(),
            loops: Vec::new(),
            cooldown: 0,
            loop_closure: config.loop_closure && config.mode() != Mode::DeadReckoning,
        }
    }

    fn add(&mut self, f: FinalizedFrame) {
        let pose = self.drift.apply(f.pose);
        self.odometry.push(StampedPose { time: f.time, pose });
        let idx = self.graph.add_frame(f.id, f.time, pose, f.keyframe.is_some());
        let Some(cloud) = f.keyframe else { return };
        self.clouds.insert(f.id, cloud);
        if !self.loop_closure {
            return;
        }
        if self.cooldown > 0 {
            self.cooldown -= 1;
            return;
        }
        if let Some(c) = detect_loop(&self.graph, idx, &self.clouds, &self.config.loop_params()) {
            log::info!("loop {} -> {} (fitness {:.4})", c.query, c.candidate, c.fitness);
            self.loops.push(LoopRecord { query: c.query, candidate: c.candidate, fitness: c.fitness, relative: c.relative });
            self.graph.add_loop(&c);
            if let Err(e) = optimize_pose_graph(&mut self.graph) {
                log::warn!("pose graph optimization failed: {e}");
            }
            self.cooldown = self.config.loop_cooldown;
        }
    }

    fn output(self, report: RunReport) -> PipelineOutput {
        let trajectory = self.graph.nodes().iter().map(|n| StampedPose { time: n.time, pose: n.pose }).collect();
        let map = export_global_map(&self.graph, &self.clouds, self.config.map_leaf)
            .into_iter()
            .map(|p| MapPoint { p: [p.p.x as f32, p.p.y as f32, p.p.z as f32], reflectance: p.reflectance as f32 })
            .collect();
        PipelineOutput {
            trajectory: TrajectoryRecord::new(trajectory).expect("frame times increase"),
            odometry: TrajectoryRecord::new(self.odometry).expect("frame times increase"),
            map,
            report,
        }
    }
}

/// Runs the full pipeline on in-memory inputs.
pub fn run_pipeline(config: &PipelineConfig, sweeps: &[Sweep], imu: &[ImuSample]) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    validate_inputs(sweeps, imu)?;
    let mode = config.mode();
    let init = static_initialization(imu, sweeps[0].start_time, config.static_init_duration, config.gravity);
    let imu_arc = Arc::new(imu.to_vec());
    let start = Pose::new(Vec3::zeros(), init.orientation);
    let frontend = Frontend::new(config.frontend_match_params(), config.frontend_map_width, start, imu_arc.clone(), init.gyro_bias);
    let mut backend = (mode != Mode::DeadReckoning).then(|| {
        let x0 = KeyframeState { q: init.orientation, b_g: init.gyro_bias, ..Default::default() };
        Backend::new(config.backend_params(), imu_arc.clone(), x0)
    });
    let mut mapper = Mapper::new(config);
    let mut report = RunReport {
        mode,
        seed: config.seed,
        frames: 0,
        keyframes: 0,
        frontend_failures: 0,
        backend_failures: 0,
        loops: Vec::new(),
        stationary_start: init.stationary,
        initial_gyro_bias: init.gyro_bias,
        tracking_lost: None,
    };
    let mut failure = None;

    std::thread::scope(|s| {
        let (pre_tx, pre_rx) = sync_channel(CHANNEL_DEPTH);
        let (fe_tx, fe_rx) = sync_channel(CHANNEL_DEPTH);
        s.spawn(|| preprocess_stage(config, sweeps, imu, init.gyro_bias, pre_tx));
        s.spawn(|| frontend_stage(frontend, config.max_lost_frames, pre_rx, fe_tx));
        for msg in fe_rx {
            let frame = match msg {
                FrontendMessage::Frame(f, failed) => {
                    report.frontend_failures += failed as usize;
                    f
                }
                FrontendMessage::Lost(id) => {
                    report.tracking_lost = Some(id);
                    break;
                }
                FrontendMessage::Failed(e) => {
                    failure = Some(e);
                    break;
                }
            };
            report.frames += 1;
            report.keyframes += frame.is_keyframe as usize;
            let finalized = match backend.as_mut() {
                Some(b) => match b.push(frame) {
                    Ok(v) => v,
                    Err(e) => {
                        failure = Some(e.into());
                        break;
                    }
                },
                None => {
                    let keyframe = frame.is_keyframe.then_some(frame.features);
                    vec![FinalizedFrame { id: frame.id, time: frame.time, pose: frame.frontend_pose, keyframe }]
                }
            };
            for f in finalized {
                mapper.add(f);
            }
        }
        // dropping the receiver lets the upstream stages exit early
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(b) = backend.as_mut() {
        for f in b.finish() {
            mapper.add(f);
        }
        report.backend_failures = b.stats.failed_optimizations;
    }
    report.loops = mapper.loops.clone();
    let output = mapper.output(report);
    match output.report.tracking_lost {
        Some(frame) => Err(PipelineError::TrackingLost { frame, partial: Box::new(output) }),
        None => Ok(output),
    }
}

#[cfg(test)]
mod tests;
