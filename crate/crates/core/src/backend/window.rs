//! Keyframe sliding window: joint optimization of prior, weighted LiDAR and
//! inertial terms, and marginalization of the oldest keyframe.

use super::prior::{marginalize, PriorFactor};
use super::{BackendError, BackendParams};
use crate::factors::{PosePriorFactor, StatePriorFactor};
use crate::geometry::{KeyframeState, Pose, Tangent15};
use crate::imu::{ImuFactor, PreintegratedImu};
use crate::matching::{add_lidar_blocks, associate, LocalFeatureMap};
use crate::scan::FeatureCloud;
use crate::solver::{HuberLoss, Problem, ResidualFunction, SolveReport, SolverOptions, Variable};
use std::collections::VecDeque;
use std::sync::Arc;

/// A frame between two keyframes, as delivered by the frontend.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularFrame {
    pub id: u64,
    pub time: f64,
    pub frontend_pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowKeyframe {
    pub id: u64,
    pub time: f64,
    pub state: KeyframeState,
    /// De-skewed features in the keyframe's sensor frame.
    pub features: FeatureCloud,
    /// Preintegration from the previous keyframe (absent for the first).
    pub link: Option<Arc<PreintegratedImu>>,
    pub frontend_pose: Pose,
    /// Regular frames between the previous keyframe and this one.
    pub regular: Vec<RegularFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub solves: Vec<SolveReport>,
    pub correspondences: usize,
}

pub struct SlidingWindow {
    pub params: BackendParams,
    pub keyframes: VecDeque<WindowKeyframe>,
    /// Prior over keyframe ids (in order).
    pub prior: Option<(Vec<u64>, PriorFactor)>,
    /// Hard anchor on the first keyframe until it is marginalized.
    pub anchor: Option<(u64, KeyframeState)>,
    pub map: LocalFeatureMap,
}

impl SlidingWindow {
    pub fn new(params: BackendParams) -> Self {
        Self { map: LocalFeatureMap::new(params.map_width), params, keyframes: VecDeque::new(), prior: None, anchor: None }
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn newest(&self) -> Option<&WindowKeyframe> {
        self.keyframes.back()
    }

    fn variable(&self, s: &KeyframeState) -> Variable {
        if self.params.use_imu {
            Variable::State(*s)
        } else {
            Variable::Pose(s.pose())
        }
    }

    fn read_back(&mut self, problem: &Problem) {
        for (i, kf) in self.keyframes.iter_mut().enumerate() {
            match problem.variable(i) {
                Variable::State(s) => kf.state = *s,
                Variable::Pose(p) => kf.state.set_pose(p),
                Variable::Vector(_) => unreachable!("window variables are poses or states"),
            }
        }
    }

    fn anchor_block(&self, problem: &mut Problem, var: usize, state: &KeyframeState) -> Result<(), BackendError> {
        let a = &self.params.anchor;
        if self.params.use_imu {
            let mut inv = Tangent15::zeros();
            for k in 0..3 {
                inv[k] = 1.0 / a.pose_sigma;
                inv[3 + k] = 1.0 / a.velocity_sigma;
                inv[6 + k] = 1.0 / a.pose_sigma;
                inv[9 + k] = 1.0 / a.acc_bias_sigma;
                inv[12 + k] = 1.0 / a.gyro_bias_sigma;
            }
            problem.add_block(vec![var], Box::new(StatePriorFactor { reference: *state, inv_sigma: inv }), None)?;
        } else {
            let f = PosePriorFactor::isotropic(state.pose(), a.pose_sigma, a.pose_sigma);
            problem.add_block(vec![var], Box::new(f), None)?;
        }
        Ok(())
    }

    fn add_prior(&self, problem: &mut Problem) -> Result<(), BackendError> {
        if let Some((ids, prior)) = &self.prior {
            let vars = ids
                .iter()
                .map(|id| self.keyframes.iter().position(|k| k.id == *id))
                .collect::<Option<Vec<usize>>>()
                .ok_or_else(|| BackendError::InvalidWindow("prior refers to a keyframe outside the window".into()))?;
            if prior.dim() > 0 {
                problem.add_block(vars, Box::new(prior.clone()), None)?;
            }
        }
        Ok(())
    }

    fn add_imu(&self, problem: &mut Problem, j: usize) -> Result<(), BackendError> {
        if !self.params.use_imu {
            return Ok(());
        }
        if let Some(link) = &self.keyframes[j].link {
            let f = ImuFactor::new(link.clone(), self.params.gravity)?;
            problem.add_block(vec![j - 1, j], Box::new(f), None)?;
        }
        Ok(())
    }

    /// LiDAR blocks of keyframe `i`; returns the number of correspondences.
    fn add_lidar(&self, problem: &mut Problem, i: usize) -> Result<usize, BackendError> {
        if !self.params.use_lidar {
            return Ok(0);
        }
        let kf = &self.keyframes[i];
        let corr = associate(&kf.features, &kf.state.pose(), &self.map, &self.params.matching, Some(kf.id));
        let anchored = self.anchor.as_ref().is_some_and(|(id, _)| *id == kf.id);
        if !self.params.use_imu && !anchored && corr.len() < self.params.matching.min_correspondences {
            return Err(BackendError::InsufficientConstraints(format!("keyframe {}: {} correspondences", kf.id, corr.len())));
        }
        add_lidar_blocks(problem, i, &corr, true, Some(HuberLoss { scale: self.params.huber_scale }))?;
        Ok(corr.len())
    }

    fn build(&self) -> Result<(Problem, usize), BackendError> {
        let mut problem = Problem::new();
        for kf in &self.keyframes {
            problem.add_variable(self.variable(&kf.state));
        }
        self.add_prior(&mut problem)?;
        if let Some((id, s)) = &self.anchor {
            if let Some(i) = self.keyframes.iter().position(|k| k.id == *id) {
                self.anchor_block(&mut problem, i, s)?;
            }
        }
        let mut corr = 0;
        for i in 0..self.keyframes.len() {
            corr += self.add_lidar(&mut problem, i)?;
            if i > 0 {
                self.add_imu(&mut problem, i)?;
            }
        }
        Ok((problem, corr))
    }

    /// Minimizes prior + weighted LiDAR + IMU cost over all window states,
    /// re-associating between outer iterations. States are left untouched
    /// on failure.
    pub fn optimize(&mut self) -> Result<WindowReport, BackendError> {
        if self.keyframes.is_empty() {
            return Err(BackendError::InvalidWindow("empty window".into()));
        }
        let backup: Vec<KeyframeState> = self.keyframes.iter().map(|k| k.state).collect();
        let mut solves = Vec::new();
        let mut correspondences = 0;
        let opts = SolverOptions { max_iterations: self.params.inner_iterations, ..Default::default() };
        for outer in 0..self.params.outer_iterations {
            let result = self.build().and_then(|(mut p, c)| {
                let rep = p.solve(&opts)?;
                Ok((p, c, rep))
            });
            let (problem, c, rep) = match result {
                Ok(v) => v,
                Err(e) => {
                    for (kf, s) in self.keyframes.iter_mut().zip(&backup) {
                        kf.state = *s;
                    }
                    return Err(e);
                }
            };
            self.read_back(&problem);
            correspondences = c;
            let converged = rep.iterations == 0;
            solves.push(rep);
            if outer + 1 < self.params.outer_iterations {
                if converged {
                    break;
                }
                self.refresh_map(false);
            }
        }
        Ok(WindowReport { solves, correspondences })
    }

    /// Re-poses the window keyframes in the backend map; with `insert_newest`
    /// the newest keyframe's features are added first.
    pub fn refresh_map(&mut self, insert_newest: bool) {
        if insert_newest {
            if let Some(kf) = self.keyframes.back() {
                if !self.map.contains(kf.id) {
                    self.map.push(kf.id, kf.state.pose(), kf.features.clone());
                }
            }
        }
        for kf in &self.keyframes {
            self.map.set_pose(kf.id, kf.state.pose());
        }
        self.map.rebuild();
    }

    /// Inserts the newest keyframe at its optimized pose and re-poses the rest.
    pub fn update_map(&mut self) {
        self.refresh_map(true);
    }

    /// Marginalizes the oldest keyframe with its LiDAR block, its IMU link
    /// and the current prior into a new prior; returns the removed keyframe.
    pub fn marginalize_oldest(&mut self) -> Result<WindowKeyframe, BackendError> {
        if self.keyframes.len() < 2 {
            return Err(BackendError::InvalidWindow("need two keyframes to marginalize".into()));
        }
        let mut problem = Problem::new();
        for kf in &self.keyframes {
            problem.add_variable(self.variable(&kf.state));
        }
        self.add_prior(&mut problem)?;
        let oldest_id = self.keyframes[0].id;
        if let Some((id, s)) = &self.anchor {
            if *id == oldest_id {
                self.anchor_block(&mut problem, 0, s)?;
            }
        }
        self.add_lidar(&mut problem, 0)?;
        self.add_imu(&mut problem, 1)?;
        let (prior, retained) = marginalize(&problem, &[0])?;
        let ids = retained.iter().map(|&i| self.keyframes[i].id).collect();
        self.prior = Some((ids, prior));
        if self.anchor.as_ref().is_some_and(|(id, _)| *id == oldest_id) {
            self.anchor = None;
        }
        Ok(self.keyframes.pop_front().expect("window has at least two keyframes"))
    }
}
