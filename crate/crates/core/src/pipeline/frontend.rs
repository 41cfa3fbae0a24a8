//! Frame-to-model LiDAR odometry with keyframe selection.

use crate::geometry::{exp_so3, Pose, Vec3};
use crate::imu::{imu_segment, ImuSample};
use crate::matching::{deskew_features_translational, overlap_ratio, register_scan, KeyframePolicy, LocalFeatureMap, MatchError, MatchParams};
use crate::scan::FeatureCloud;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendFrame {
    pub id: u64,
    pub time: f64,
    pub pose: Pose,
    pub is_keyframe: bool,
    /// Fully de-skewed features in the frame's body frame at `time`.
    pub features: FeatureCloud,
    /// Registration failure, if any; the pose is then the motion prediction.
    pub failure: Option<MatchError>,
}

pub struct Frontend {
    params: MatchParams,
    map: LocalFeatureMap,
    imu: Arc<Vec<ImuSample>>,
    gyro_bias: Vec3,
    initial: Pose,
    /// Last two (time, pose) estimates, newest last.
    history: Vec<(f64, Pose)>,
    keyframes: KeyframePolicy,
    consecutive_failures: usize,
}

impl Frontend {
    pub fn new(params: MatchParams, map_width: usize, initial: Pose, imu: Arc<Vec<ImuSample>>, gyro_bias: Vec3) -> Self {
        Self {
            params,
            map: LocalFeatureMap::new(map_width),
            imu,
            gyro_bias,
            initial,
            history: Vec::new(),
            keyframes: KeyframePolicy::new(),
            consecutive_failures: 0,
        }
    }

    pub fn consecutive_failures(&self) -> usize {
        self.consecutive_failures
    }

    /// Rotation over `[t0, t1]` from bias-corrected gyro rates (midpoint rule).
    fn gyro_rotation(&self, t0: f64, t1: f64) -> crate::geometry::Quat {
        let mut q = crate::geometry::Quat::identity();
        if let Ok(seg) = imu_segment(&self.imu, t0, t1) {
            for w in seg.windows(2) {
                q *= exp_so3(&((0.5 * (w[0].gyro + w[1].gyro) - self.gyro_bias) * (w[1].t - w[0].t)));
            }
        }
        q
    }

    /// Constant-velocity translation with gyro-integrated rotation.
    pub fn predict(&self, time: f64) -> Pose {
        match self.history.as_slice() {
            [] => self.initial,
            [(_, p)] => *p,
            [.., (t0, p0), (t1, p1)] => {
                let scale = (time - t1) / (t1 - t0);
                Pose::new(p1.t + scale * (p1.t - p0.t), p1.q * self.gyro_rotation(*t1, time))
            }
        }
    }

    /// Registers one rotationally de-skewed feature cloud captured over the
    /// sweep ending at `time`.
    pub fn process(&mut self, id: u64, time: f64, features: &FeatureCloud) -> FrontendFrame {
        let Some(&(_, prev)) = self.history.last() else {
            let pose = self.initial;
            self.map.push(id, pose, features.clone());
            self.map.rebuild();
            self.history.push((time, pose));
            self.keyframes.decide(None, &self.params);
            return FrontendFrame { id, time, pose, is_keyframe: true, features: features.clone(), failure: None };
        };
        let guess = self.predict(time);
        let guess_cloud = deskew_features_translational(features, &prev, &guess);
        let (pose, cloud, failure) = match register_scan(&guess_cloud, &self.map, &guess, &self.params) {
            Ok(reg) => (reg.pose, deskew_features_translational(features, &prev, &reg.pose), None),
            Err(e) => (guess, guess_cloud, Some(e)),
        };
        let overlap = failure.is_none().then(|| overlap_ratio(&cloud, &pose, &self.map, self.params.overlap_radius));
        let is_keyframe = self.keyframes.decide(overlap, &self.params);
        if failure.is_none() {
            self.consecutive_failures = 0;
            self.map.push(id, pose, cloud.clone());
            self.map.rebuild();
        } else {
            self.consecutive_failures += 1;
        }
        self.history.push((time, pose));
        if self.history.len() > 2 {
            self.history.remove(0);
        }
        FrontendFrame { id, time, pose, is_keyframe, features: cloud, failure }
    }
}
