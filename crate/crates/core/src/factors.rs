//! Residual blocks shared by the frontend, backend and pose graph.
//!
//! Geometric factors accept either a `Pose` or a `State` variable; for a
//! state, the pose Jacobian columns land on the `δt` and `δθ` slots.

use crate::geometry::{log_so3, right_jacobian_inv, skew, KeyframeState, Mat3, Pose, Tangent15, Tangent6, Vec3};
use crate::matching::residuals::{point_jacobian, EdgeCorrespondence, PlaneCorrespondence};
use crate::solver::{ResidualFunction, Variable};
use nalgebra::{DMatrix, DVector, SMatrix, Matrix6};

/// Expands a `rows × 6` pose Jacobian to the variable's tangent layout.
pub fn expand_pose_jacobian(var: &Variable, j: &DMatrix<f64>) -> DMatrix<f64> {
    match var {
        Variable::Pose(_) => j.clone(),
        Variable::State(_) => {
            let mut out = DMatrix::zeros(j.nrows(), 15);
            out.view_mut((0, 0), (j.nrows(), 3)).copy_from(&j.columns(0, 3));
            out.view_mut((0, 6), (j.nrows(), 3)).copy_from(&j.columns(3, 3));
            out
        }
        Variable::Vector(_) => panic!("pose factor applied to a vector variable"),
    }
}

fn pose_of(var: &Variable) -> Pose {
    var.pose().expect("pose factor needs a pose or state variable")
}

/// Point-to-edge residual as the 3-vector `√w · (p−é)×(p−è) / ‖é−è‖`,
/// whose squared norm is `w · D_e²`.
pub struct EdgeFactor {
    pub p_l: Vec3,
    pub a: Vec3,
    pub b: Vec3,
    pub sqrt_weight: f64,
}

impl EdgeFactor {
    pub fn new(c: &EdgeCorrespondence, weight: f64) -> Self {
        Self { p_l: c.feature.p, a: c.a, b: c.b, sqrt_weight: weight.sqrt() }
    }
}

impl ResidualFunction for EdgeFactor {
    fn dim(&self) -> usize {
        3
    }

    fn evaluate(&self, vars: &[&Variable], with_jacobians: bool) -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let pose = pose_of(vars[0]);
        let p = pose.transform_point(&self.p_l);
        let l = (self.a - self.b).norm();
        let r = self.sqrt_weight * (p - self.a).cross(&(p - self.b)) / l;
        let mut jac = Vec::new();
        if with_jacobians {
            let j = self.sqrt_weight * skew(&(self.b - self.a)) / l * point_jacobian(&pose, &self.p_l);
            jac.push(expand_pose_jacobian(vars[0], &DMatrix::from_column_slice(3, 6, j.as_slice())));
        }
        (DVector::from_column_slice(r.as_slice()), jac)
    }
}

/// Signed point-to-plane residual `√w · (nᵀp + d)`.
pub struct PlaneFactor {
    pub p_l: Vec3,
    pub n: Vec3,
    pub d: f64,
    pub sqrt_weight: f64,
}

impl PlaneFactor {
    pub fn new(c: &PlaneCorrespondence, weight: f64) -> Self {
        Self { p_l: c.feature.p, n: c.n, d: c.offset(), sqrt_weight: weight.sqrt() }
    }
}

impl ResidualFunction for PlaneFactor {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, vars: &[&Variable], with_jacobians: bool) -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let pose = pose_of(vars[0]);
        let p = pose.transform_point(&self.p_l);
        let r = self.sqrt_weight * (self.n.dot(&p) + self.d);
        let mut jac = Vec::new();
        if with_jacobians {
            let j = self.sqrt_weight * self.n.transpose() * point_jacobian(&pose, &self.p_l);
            jac.push(expand_pose_jacobian(vars[0], &DMatrix::from_row_slice(1, 6, j.as_slice())));
        }
        (DVector::from_element(1, r), jac)
    }
}

/// Relative-pose residual `S · [t_E; Log R_E]` with `E = M⁻¹ (T_i⁻¹ T_j)`.
pub struct RelativePoseFactor {
    pub measured: Pose,
    pub sqrt_info: Matrix6<f64>,
}

impl RelativePoseFactor {
    pub fn new(measured: Pose, sqrt_info: Matrix6<f64>) -> Self {
        Self { measured, sqrt_info }
    }

    pub fn isotropic(measured: Pose, sigma_t: f64, sigma_r: f64) -> Self {
        let mut s = Matrix6::zeros();
        for k in 0..3 {
            s[(k, k)] = 1.0 / sigma_t;
            s[(k + 3, k + 3)] = 1.0 / sigma_r;
        }
        Self { measured, sqrt_info: s }
    }

    /// Unwhitened error and Jacobians w.r.t. the two pose tangents.
    pub fn error(&self, ti: &Pose, tj: &Pose) -> (Tangent6, Matrix6<f64>, Matrix6<f64>) {
        let ri = ti.rotation();
        let rj = tj.rotation();
        let rm = self.measured.rotation();
        let t_ij = ri.transpose() * (tj.t - ti.t);
        let e = self.measured.inverse().compose(&ti.between(tj));
        let phi = log_so3(&e.q);
        let jinv = right_jacobian_inv(&phi);
        let mut r = Tangent6::zeros();
        r.fixed_rows_mut::<3>(0).copy_from(&e.t);
        r.fixed_rows_mut::<3>(3).copy_from(&phi);
        let mut ji = Matrix6::zeros();
        let mut jj = Matrix6::zeros();
        let rmt_rit: Mat3 = rm.transpose() * ri.transpose();
        ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&-rmt_rit);
        ji.fixed_view_mut::<3, 3>(0, 3).copy_from(&(rm.transpose() * skew(&t_ij)));
        ji.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-jinv * rj.transpose() * ri));
        jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&rmt_rit);
        jj.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
        (r, ji, jj)
    }
}

impl ResidualFunction for RelativePoseFactor {
    fn dim(&self) -> usize {
        6
    }

    fn evaluate(&self, vars: &[&Variable], with_jacobians: bool) -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let (r, ji, jj) = self.error(&pose_of(vars[0]), &pose_of(vars[1]));
        let rw = self.sqrt_info * r;
        let mut jac = Vec::new();
        if with_jacobians {
            for (v, j) in [(vars[0], ji), (vars[1], jj)] {
                let w = self.sqrt_info * j;
                jac.push(expand_pose_jacobian(v, &DMatrix::from_column_slice(6, 6, w.as_slice())));
            }
        }
        (DVector::from_column_slice(rw.as_slice()), jac)
    }
}

/// Unary pose prior `S · (x ⊟ x₀)`.
pub struct PosePriorFactor {
    pub reference: Pose,
    pub sqrt_info: Matrix6<f64>,
}

impl PosePriorFactor {
    pub fn isotropic(reference: Pose, sigma_t: f64, sigma_r: f64) -> Self {
        let mut s = Matrix6::zeros();
        for k in 0..3 {
            s[(k, k)] = 1.0 / sigma_t;
            s[(k + 3, k + 3)] = 1.0 / sigma_r;
        }
        Self { reference, sqrt_info: s }
    }
}

impl ResidualFunction for PosePriorFactor {
    fn dim(&self) -> usize {
        6
    }

    fn evaluate(&self, vars: &[&Variable], with_jacobians: bool) -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let pose = pose_of(vars[0]);
        let d = pose.boxminus(&self.reference);
        let r = self.sqrt_info * d;
        let mut jac = Vec::new();
        if with_jacobians {
            let mut j = Matrix6::identity();
            j.fixed_view_mut::<3, 3>(3, 3).copy_from(&right_jacobian_inv(&d.fixed_rows::<3>(3).into_owned()));
            let w = self.sqrt_info * j;
            jac.push(expand_pose_jacobian(vars[0], &DMatrix::from_column_slice(6, 6, w.as_slice())));
        }
        (DVector::from_column_slice(r.as_slice()), jac)
    }
}

/// Diagonal prior on a full keyframe state, `diag(1/σ) · (x ⊟ x₀)`; a zero
/// entry in `inv_sigma` leaves that component free.
pub struct StatePriorFactor {
    pub reference: KeyframeState,
    pub inv_sigma: Tangent15,
}

impl ResidualFunction for StatePriorFactor {
    fn dim(&self) -> usize {
        15
    }

    fn evaluate(&self, vars: &[&Variable], with_jacobians: bool) -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let x = vars[0].state().expect("state prior needs a state variable");
        let d = x.boxminus(&self.reference);
        let r = d.component_mul(&self.inv_sigma);
        let mut jac = Vec::new();
        if with_jacobians {
            let mut j = SMatrix::<f64, 15, 15>::identity();
            j.fixed_view_mut::<3, 3>(6, 6).copy_from(&right_jacobian_inv(&d.fixed_rows::<3>(6).into_owned()));
            for row in 0..15 {
                for c in 0..15 {
                    j[(row, c)] *= self.inv_sigma[row];
                }
            }
            jac.push(DMatrix::from_column_slice(15, 15, j.as_slice()));
        }
        (DVector::from_column_slice(r.as_slice()), jac)
    }
}
