//! Flat `key=value` pipeline configuration.

use crate::backend::BackendParams;
use crate::geometry::{Pose, Quat, Vec3};
use crate::imu::{gravity_vector, ImuNoise};
use crate::loop_closure::{IcpParams, LoopParams};
use crate::matching::MatchParams;
use crate::preprocess::FeatureParams;
use thiserror::Error;

/// Injected heading drift (rad per frame) for the loop scenarios.
pub const LOOP_DRIFT_YAW_PER_FRAME: f64 = 3e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key \"{0}\"")]
    UnknownKey(String),
    #[error("{key}: cannot parse \"{value}\"")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

macro_rules! config {
    ($($(#[doc = $doc:literal])* $name:ident: $ty:ty = $default:expr,)*) => {
        /// All pipeline tunables. Field names double as configuration keys.
        #[derive(Debug, Clone, PartialEq)]
        pub struct PipelineConfig {
            $($(#[doc = $doc])* pub $name: $ty,)*
        }

        impl Default for PipelineConfig {
            fn default() -> Self {
                Self { $($name: $default,)* }
            }
        }

        impl PipelineConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name),)*];

            /// Sets one field from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                match key {
                    $(stringify!($name) => {
                        self.$name = value.parse::<$ty>().map_err(|_| ConfigError::BadValue {
                            key: key.to_string(),
                            value: value.to_string(),
                        })?;
                    })*
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
                Ok(())
            }

            /// `(key, value)` pairs in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($name), self.$name.to_string()),)*]
            }
        }
    };
}

config! {
    /// Keyframes in the sliding window.
    window_size: usize = 3,
    frontend_map_width: usize = 20,
    backend_map_width: usize = 30,
    overlap_threshold: f64 = 0.6,
    overlap_radius: f64 = 0.5,
    /// Regular frames after which the next frame is forced to be a keyframe.
    keyframe_gap: usize = 2,
    line_delta: f64 = 0.1,
    lambda: f64 = 15.0,
    plane_ratio: f64 = 0.3,
    edge_ratio: f64 = 0.25,
    min_valid_points: usize = 28,
    nn_radius: f64 = 1.0,
    line_factor: f64 = 3.0,
    plane_gate: f64 = 0.2,
    min_correspondences: usize = 12,
    frontend_outer_iterations: usize = 3,
    frontend_inner_iterations: usize = 8,
    backend_outer_iterations: usize = 2,
    backend_inner_iterations: usize = 10,
    huber_scale: f64 = 0.1,
    frontend_huber_scale: f64 = 0.1,
    /// Information of frontend relative factors relative to the IMU's.
    frontend_weight: f64 = 1e-2,
    edge_leaf: f64 = 0.2,
    plane_leaf: f64 = 0.4,
    map_leaf: f64 = 0.3,
    acc_noise: f64 = 1e-2,
    gyro_noise: f64 = 1e-3,
    acc_walk: f64 = 1e-4,
    gyro_walk: f64 = 1e-5,
    gravity: f64 = 9.81,
    /// LiDAR origin in the IMU frame, m.
    extrinsic_x: f64 = 0.0,
    extrinsic_y: f64 = 0.0,
    extrinsic_z: f64 = 0.0,
    /// LiDAR-to-IMU rotation as roll/pitch/yaw, rad.
    extrinsic_roll: f64 = 0.0,
    extrinsic_pitch: f64 = 0.0,
    extrinsic_yaw: f64 = 0.0,
    /// Initial stationary interval used for gravity and gyro-bias estimation, s.
    static_init_duration: f64 = 1.0,
    use_imu: bool = true,
    /// Skip the backend and report frontend poses.
    frontend_only: bool = false,
    loop_closure: bool = true,
    loop_radius: f64 = 10.0,
    loop_gap: usize = 20,
    loop_min_travel: f64 = 20.0,
    loop_fitness: f64 = 0.3,
    loop_inlier_ratio: f64 = 0.5,
    loop_cooldown: usize = 10,
    loop_submap: usize = 10,
    /// Correspondence gate of the coarse ICP pass; 0 disables it.
    loop_coarse_gate: f64 = 0.0,
    /// Correspondence gate of the refining ICP pass; 0 disables it.
    loop_refine_gate: f64 = 0.3,
    loop_source_leaf: f64 = 0.2,
    loop_target_leaf: f64 = 0.1,
    graph_sigma_t: f64 = 0.01,
    graph_sigma_r: f64 = 0.1f64.to_radians(),
    max_lost_frames: usize = 3,
    /// Synthetic yaw drift added to every odometry increment, rad.
    drift_yaw_per_frame: f64 = 0.0,
    seed: u64 = 0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    NoImu,
    DeadReckoning,
}

impl PipelineConfig {
    /// Parses `key=value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, msg: format!("expected key=value, got \"{line}\"") })?;
            c.set(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.window_size < 2 {
            return Err(ConfigError::Invalid("window_size must be at least 2".into()));
        }
        let positive = [
            ("frontend_map_width", self.frontend_map_width as f64),
            ("backend_map_width", self.backend_map_width as f64),
            ("overlap_threshold", self.overlap_threshold),
            ("overlap_radius", self.overlap_radius),
            ("keyframe_gap", self.keyframe_gap as f64),
            ("line_delta", self.line_delta),
            ("lambda", self.lambda),
            ("plane_ratio", self.plane_ratio),
            ("edge_ratio", self.edge_ratio),
            ("nn_radius", self.nn_radius),
            ("line_factor", self.line_factor),
            ("plane_gate", self.plane_gate),
            ("frontend_outer_iterations", self.frontend_outer_iterations as f64),
            ("frontend_inner_iterations", self.frontend_inner_iterations as f64),
            ("backend_outer_iterations", self.backend_outer_iterations as f64),
            ("backend_inner_iterations", self.backend_inner_iterations as f64),
            ("huber_scale", self.huber_scale),
            ("frontend_weight", self.frontend_weight),
            ("edge_leaf", self.edge_leaf),
            ("plane_leaf", self.plane_leaf),
            ("map_leaf", self.map_leaf),
            ("acc_noise", self.acc_noise),
            ("gyro_noise", self.gyro_noise),
            ("acc_walk", self.acc_walk),
            ("gyro_walk", self.gyro_walk),
            ("gravity", self.gravity),
            ("static_init_duration", self.static_init_duration),
            ("loop_radius", self.loop_radius),
            ("loop_gap", self.loop_gap as f64),
            ("loop_fitness", self.loop_fitness),
            ("loop_inlier_ratio", self.loop_inlier_ratio),
            ("graph_sigma_t", self.graph_sigma_t),
            ("graph_sigma_r", self.graph_sigma_r),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(ConfigError::Invalid(format!("{k} must be positive")));
        }
        let non_negative = [self.loop_min_travel, self.loop_coarse_gate, self.loop_refine_gate, self.loop_source_leaf, self.loop_target_leaf];
        if !non_negative.iter().all(|v| *v >= 0.0) {
            return Err(ConfigError::Invalid("loop_min_travel, loop ICP gates and loop leaves must be non-negative".into()));
        }
        if !(self.frontend_huber_scale >= 0.0) {
            return Err(ConfigError::Invalid("frontend_huber_scale must be non-negative".into()));
        }
        if !self.drift_yaw_per_frame.is_finite() {
            return Err(ConfigError::Invalid("drift_yaw_per_frame must be finite".into()));
        }
        Ok(())
    }

    /// Defaults for a simulator scenario: the loop scenarios inject heading
    /// drift into the odometry so that loop closure has something to fix.
    pub fn for_scenario(name: &str) -> Self {
        let mut c = Self::default();
        if name.starts_with("loop") {
            c.drift_yaw_per_frame = LOOP_DRIFT_YAW_PER_FRAME;
        }
        c
    }

    pub fn mode(&self) -> Mode {
        if self.frontend_only {
            Mode::DeadReckoning
        } else if self.use_imu {
            Mode::Full
        } else {
            Mode::NoImu
        }
    }

    /// LiDAR-to-IMU transform.
    pub fn extrinsic(&self) -> Pose {
        Pose::new(
            Vec3::new(self.extrinsic_x, self.extrinsic_y, self.extrinsic_z),
            Quat::from_euler_angles(self.extrinsic_roll, self.extrinsic_pitch, self.extrinsic_yaw),
        )
    }

    pub fn imu_noise(&self) -> ImuNoise {
        ImuNoise { acc: self.acc_noise, gyro: self.gyro_noise, acc_walk: self.acc_walk, gyro_walk: self.gyro_walk }
    }

    pub fn feature_params(&self) -> FeatureParams {
        FeatureParams { plane_ratio: self.plane_ratio, edge_ratio: self.edge_ratio, min_valid: self.min_valid_points }
    }

    fn match_params(&self, outer: usize, inner: usize) -> MatchParams {
        MatchParams {
            nn_radius: self.nn_radius,
            line_factor: self.line_factor,
            plane_gate: self.plane_gate,
            line_delta: self.line_delta,
            lambda: self.lambda,
            robust_scale: self.frontend_huber_scale,
            outer_iterations: outer,
            inner_iterations: inner,
            min_correspondences: self.min_correspondences,
            overlap_radius: self.overlap_radius,
            overlap_threshold: self.overlap_threshold,
            keyframe_gap: self.keyframe_gap,
        }
    }

    pub fn frontend_match_params(&self) -> MatchParams {
        self.match_params(self.frontend_outer_iterations, self.frontend_inner_iterations)
    }

    pub fn backend_params(&self) -> BackendParams {
        BackendParams {
            window_size: self.window_size,
            map_width: self.backend_map_width,
            outer_iterations: self.backend_outer_iterations,
            inner_iterations: self.backend_inner_iterations,
            huber_scale: self.huber_scale,
            matching: self.match_params(self.backend_outer_iterations, self.backend_inner_iterations),
            gravity: gravity_vector(self.gravity),
            noise: self.imu_noise(),
            use_imu: self.use_imu,
            use_lidar: true,
            frontend_weight: self.frontend_weight,
            anchor: Default::default(),
        }
    }

    pub fn loop_params(&self) -> LoopParams {
        LoopParams {
            radius: self.loop_radius,
            min_keyframe_gap: self.loop_gap,
            min_travel: self.loop_min_travel,
            fitness_gate: self.loop_fitness,
            inlier_gate: self.loop_inlier_ratio,
            submap_half_width: self.loop_submap,
            source_leaf: self.loop_source_leaf,
            target_leaf: self.loop_target_leaf,
            coarse_correspondence: (self.loop_coarse_gate > 0.0).then_some(self.loop_coarse_gate),
            refine_correspondence: (self.loop_refine_gate > 0.0).then_some(self.loop_refine_gate),
            icp: IcpParams::default(),
            ..Default::default()
        }
    }
}
