//! Keyframe sliding-window fusion backend.
//!
//! Frames arrive in order from the frontend. Keyframes enter the window and
//! are jointly optimized; when the window is full the oldest keyframe is
//! marginalized into a prior and, together with the regular frames that
//! follow it, is finalized.

pub mod prior;
pub mod regular;
pub mod window;

use crate::geometry::{KeyframeState, Pose, Vec3};
use crate::imu::{gravity_vector, imu_segment, ImuError, ImuNoise, ImuSample, PreintegratedImu, DEFAULT_GRAVITY};
use crate::matching::MatchParams;
use crate::scan::FeatureCloud;
use crate::solver::SolverError;
pub use prior::{marginalize, schur_complement, PriorFactor};
pub use regular::optimize_regular_frames;
use std::sync::Arc;
use thiserror::Error;
pub use window::{RegularFrame, SlidingWindow, WindowKeyframe, WindowReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("insufficient constraints: {0}")]
    InsufficientConstraints(String),
    #[error("marginalized block is singular")]
    SingularBlock,
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Imu(#[from] ImuError),
}

/// Prior sigmas on the first keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorSigmas {
    pub pose_sigma: f64,
    pub velocity_sigma: f64,
    pub acc_bias_sigma: f64,
    pub gyro_bias_sigma: f64,
}

impl Default for AnchorSigmas {
    fn default() -> Self {
        Self { pose_sigma: 1e-5, velocity_sigma: 0.5, acc_bias_sigma: 0.05, gyro_bias_sigma: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackendParams {
    pub window_size: usize,
    pub map_width: usize,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub huber_scale: f64,
    pub matching: MatchParams,
    pub gravity: Vec3,
    pub noise: ImuNoise,
    pub use_imu: bool,
    pub use_lidar: bool,
    /// Information of frontend relative factors relative to the IMU's.
    pub frontend_weight: f64,
    pub anchor: AnchorSigmas,
}

impl Default for BackendParams {
    fn default() -> Self {
        Self {
            window_size: 3,
            map_width: 30,
            outer_iterations: 2,
            inner_iterations: 10,
            huber_scale: 0.1,
            matching: MatchParams::default(),
            gravity: gravity_vector(DEFAULT_GRAVITY),
            noise: ImuNoise::default(),
            use_imu: true,
            use_lidar: true,
            frontend_weight: 1e-2,
            anchor: AnchorSigmas::default(),
        }
    }
}

/// Frontend output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub id: u64,
    pub time: f64,
    pub frontend_pose: Pose,
    pub is_keyframe: bool,
    /// Features in the frame's sensor frame; only used for keyframes.
    pub features: FeatureCloud,
}

/// A frame whose backend pose will not change any more.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalizedFrame {
    pub id: u64,
    pub time: f64,
    pub pose: Pose,
    /// Keyframe features (sensor frame); `None` for regular frames.
    pub keyframe: Option<FeatureCloud>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BackendStats {
    pub keyframes: usize,
    pub failed_optimizations: usize,
    pub correspondences: usize,
}

pub struct Backend {
    pub window: SlidingWindow,
    imu: Arc<Vec<ImuSample>>,
    initial: KeyframeState,
    pending: Vec<RegularFrame>,
    pub stats: BackendStats,
}

impl Backend {
    /// `initial` seeds the first keyframe's velocity and biases.
    pub fn new(params: BackendParams, imu: Arc<Vec<ImuSample>>, initial: KeyframeState) -> Self {
        Self { window: SlidingWindow::new(params), imu, initial, pending: Vec::new(), stats: BackendStats::default() }
    }

    pub fn params(&self) -> &BackendParams {
        &self.window.params
    }

    fn preintegrate(&self, t0: f64, t1: f64, from: &KeyframeState) -> Result<Arc<PreintegratedImu>, BackendError> {
        let seg = imu_segment(&self.imu, t0, t1)?;
        Ok(Arc::new(PreintegratedImu::integrate(&seg, from.b_a, from.b_g, &self.window.params.noise)?))
    }

    pub fn push(&mut self, frame: FrameInput) -> Result<Vec<FinalizedFrame>, BackendError> {
        if !frame.is_keyframe {
            if self.window.is_empty() {
                return Err(BackendError::InvalidWindow("the first frame must be a keyframe".into()));
            }
            self.pending.push(RegularFrame { id: frame.id, time: frame.time, frontend_pose: frame.frontend_pose });
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        if self.window.len() >= self.window.params.window_size {
            let old = self.window.marginalize_oldest()?;
            out.extend(self.finalize_pair(&old, &self.window.keyframes[0]));
        }
        let (state, link) = match self.window.newest() {
            None => {
                let mut s = self.initial;
                s.set_pose(&frame.frontend_pose);
                self.window.anchor = Some((frame.id, s));
                (s, None)
            }
            Some(prev) => {
                let rel = prev.frontend_pose.between(&frame.frontend_pose);
                let pose = prev.state.pose().compose(&rel);
                if self.window.params.use_imu {
                    let link = self.preintegrate(prev.time, frame.time, &prev.state)?;
                    let mut s = link.predict(&prev.state, &self.window.params.gravity);
                    s.set_pose(&pose);
                    (s, Some(link))
                } else {
                    let mut s = prev.state;
                    s.set_pose(&pose);
                    (s, None)
                }
            }
        };
        self.window.keyframes.push_back(WindowKeyframe {
            id: frame.id,
            time: frame.time,
            state,
            features: frame.features,
            link,
            frontend_pose: frame.frontend_pose,
            regular: std::mem::take(&mut self.pending),
        });
        self.stats.keyframes += 1;
        match self.window.optimize() {
            Ok(rep) => self.stats.correspondences += rep.correspondences,
            Err(e) => {
                log::warn!("window optimization failed at frame {}: {e}", frame.id);
                self.stats.failed_optimizations += 1;
            }
        }
        self.window.update_map();
        Ok(out)
    }

    /// `a` followed by the regular frames leading up to `b`.
    fn finalize_pair(&self, a: &WindowKeyframe, b: &WindowKeyframe) -> Vec<FinalizedFrame> {
        let mut out = vec![FinalizedFrame { id: a.id, time: a.time, pose: a.state.pose(), keyframe: Some(a.features.clone()) }];
        if b.regular.is_empty() {
            return out;
        }
        let mut frontend = vec![a.frontend_pose];
        frontend.extend(b.regular.iter().map(|r| r.frontend_pose));
        frontend.push(b.frontend_pose);
        let poses = self.interpolate(a, b, &frontend).unwrap_or_else(|e| {
            log::warn!("regular-frame optimization failed after keyframe {}: {e}", a.id);
            let base = a.state.pose();
            b.regular.iter().map(|r| base.compose(&a.frontend_pose.between(&r.frontend_pose))).collect()
        });
        out.extend(b.regular.iter().zip(poses).map(|(r, pose)| FinalizedFrame { id: r.id, time: r.time, pose, keyframe: None }));
        out
    }

    fn interpolate(&self, a: &WindowKeyframe, b: &WindowKeyframe, frontend: &[Pose]) -> Result<Vec<Pose>, BackendError> {
        let mut links = Vec::new();
        if self.window.params.use_imu {
            let mut times = vec![a.time];
            times.extend(b.regular.iter().map(|r| r.time));
            times.push(b.time);
            for w in times.windows(2) {
                links.push(self.preintegrate(w[0], w[1], &a.state)?);
            }
        }
        optimize_regular_frames(&a.state, &b.state, frontend, &links, &self.window.params)
    }

    /// Finalizes everything still held: the window keyframes, their regular
    /// frames, and trailing regular frames (extrapolated with frontend motion).
    pub fn finish(&mut self) -> Vec<FinalizedFrame> {
        let kfs: Vec<WindowKeyframe> = self.window.keyframes.iter().cloned().collect();
        let mut out = Vec::new();
        for w in kfs.windows(2) {
            out.extend(self.finalize_pair(&w[0], &w[1]));
        }
        if let Some(last) = kfs.last() {
            out.push(FinalizedFrame { id: last.id, time: last.time, pose: last.state.pose(), keyframe: Some(last.features.clone()) });
            let base = last.state.pose();
            for r in self.pending.drain(..) {
                let pose = base.compose(&last.frontend_pose.between(&r.frontend_pose));
                out.push(FinalizedFrame { id: r.id, time: r.time, pose, keyframe: None });
            }
        }
        self.window.keyframes.clear();
        out
    }
}
