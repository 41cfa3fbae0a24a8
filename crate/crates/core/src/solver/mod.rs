//! Levenberg-Marquardt over manifold-valued variables.
//!
//! A [`Problem`] owns its variables and a list of residual blocks. Each block
//! evaluates a residual vector plus one Jacobian per referenced variable,
//! taken with respect to that variable's tangent increment. Normal equations
//! are assembled in block order (fixed summation order) and solved densely
//! below [`DENSE_LIMIT`] tangent dimensions, with an envelope Cholesky above.

pub mod sparse;

use crate::geometry::{GeometryError, KeyframeState, Pose, Tangent15, Tangent6};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use sparse::SkylineMatrix;
use thiserror::Error;

pub const DENSE_LIMIT: usize = 300;
const MAX_DAMPING: f64 = 1e8;
/// Gain ratio above which the undamped step is also tried.
const GN_TRIAL_RATIO: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("normal equations unsolvable at maximum damping")]
    NumericalFailure,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Variable {
    Vector(DVector<f64>),
    Pose(Pose),
    State(KeyframeState),
}

impl Variable {
    pub fn dim(&self) -> usize {
        match self {
            Variable::Vector(v) => v.len(),
            Variable::Pose(_) => 6,
            Variable::State(_) => 15,
        }
    }

    pub fn plus(&self, delta: &[f64]) -> Result<Variable, GeometryError> {
        Ok(match self {
            Variable::Vector(v) => Variable::Vector(v + DVector::from_column_slice(delta)),
            Variable::Pose(p) => {
                let d = Tangent6::from_column_slice(delta);
                if d.fixed_rows::<3>(3).norm() >= std::f64::consts::PI {
                    return Err(GeometryError::DeltaTooLarge(d.fixed_rows::<3>(3).norm()));
                }
                Variable::Pose(p.boxplus(&d))
            }
            Variable::State(s) => Variable::State(s.boxplus(&Tangent15::from_column_slice(delta))?),
        })
    }

    /// Pose of a `Pose` or `State` variable.
    pub fn pose(&self) -> Option<Pose> {
        match self {
            Variable::Pose(p) => Some(*p),
            Variable::State(s) => Some(s.pose()),
            Variable::Vector(_) => None,
        }
    }

    pub fn state(&self) -> Option<&KeyframeState> {
        match self {
            Variable::State(s) => Some(s),
            _ => None,
        }
    }

    pub fn vector(&self) -> Option<&DVector<f64>> {
        match self {
            Variable::Vector(v) => Some(v),
            _ => None,
        }
    }

    /// Tangent difference `self ⊟ base`; both must be the same kind.
    pub fn minus(&self, base: &Variable) -> DVector<f64> {
        match (self, base) {
            (Variable::Vector(a), Variable::Vector(b)) => a - b,
            (Variable::Pose(a), Variable::Pose(b)) => DVector::from_column_slice(a.boxminus(b).as_slice()),
            (Variable::State(a), Variable::State(b)) => DVector::from_column_slice(a.boxminus(b).as_slice()),
            _ => panic!("tangent difference between variables of different kinds"),
        }
    }
}

/// A residual term over one or more variables.
pub trait ResidualFunction: Send + Sync {
    fn dim(&self) -> usize;

    /// Residual and, when `with_jacobians` is set, one `dim × var.dim()`
    /// Jacobian per variable w.r.t. its tangent increment.
    fn evaluate(&self, vars: &[&Variable], with_jacobians: bool) -> (DVector<f64>, Vec<DMatrix<f64>>);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberLoss {
    pub scale: f64,
}

impl HuberLoss {
    /// `(ρ(s), ρ'(s))` for squared norm `s`.
    pub fn evaluate(&self, s: f64) -> (f64, f64) {
        let d2 = self.scale * self.scale;
        if s <= d2 {
            (s, 1.0)
        } else {
            let r = s.sqrt();
            (2.0 * self.scale * r - d2, self.scale / r)
        }
    }
}

pub struct ResidualBlock {
    pub vars: Vec<usize>,
    pub function: Box<dyn ResidualFunction>,
    pub loss: Option<HuberLoss>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    TrustRegionCollapse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub gradient_norm: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 50, gradient_tolerance: 1e-10, step_tolerance: 1e-12, initial_damping: 1e-4 }
    }
}

#[derive(Default)]
pub struct Problem {
    variables: Vec<Variable>,
    fixed: Vec<bool>,
    blocks: Vec<ResidualBlock>,
}

struct Linearization {
    cost: f64,
    /// Per block: weighted residual and weighted Jacobians.
    terms: Vec<(DVector<f64>, Vec<DMatrix<f64>>)>,
}

impl Problem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, v: Variable) -> usize {
        self.variables.push(v);
        self.fixed.push(false);
        self.variables.len() - 1
    }

    pub fn set_fixed(&mut self, index: usize, fixed: bool) {
        self.fixed[index] = fixed;
    }

    pub fn is_fixed(&self, index: usize) -> bool {
        self.fixed[index]
    }

    pub fn variable(&self, index: usize) -> &Variable {
        &self.variables[index]
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn set_variable(&mut self, index: usize, v: Variable) {
        self.variables[index] = v;
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn add_block(
        &mut self,
        vars: Vec<usize>,
        function: Box<dyn ResidualFunction>,
        loss: Option<HuberLoss>,
    ) -> Result<usize, SolverError> {
        if vars.is_empty() {
            return Err(SolverError::InvalidProblem("residual block without variables".into()));
        }
        if let Some(&bad) = vars.iter().find(|&&v| v >= self.variables.len()) {
            return Err(SolverError::InvalidProblem(format!("variable index {bad} does not exist")));
        }
        self.blocks.push(ResidualBlock { vars, function, loss });
        Ok(self.blocks.len() - 1)
    }

    /// Tangent offsets of the free variables; `None` for fixed ones.
    pub fn offsets(&self) -> (Vec<Option<usize>>, usize) {
        let mut off = Vec::with_capacity(self.variables.len());
        let mut n = 0;
        for (v, &fixed) in self.variables.iter().zip(&self.fixed) {
            if fixed {
                off.push(None);
            } else {
                off.push(Some(n));
                n += v.dim();
            }
        }
        (off, n)
    }

    fn block_vars<'a>(&'a self, vars: &'a [Variable], block: &ResidualBlock) -> Vec<&'a Variable> {
        block.vars.iter().map(|&i| &vars[i]).collect()
    }

    fn cost_at(&self, vars: &[Variable]) -> f64 {
        let costs: Vec<f64> = self
            .blocks
            .par_iter()
            .map(|b| {
                let (r, _) = b.function.evaluate(&self.block_vars(vars, b), false);
                let s = r.norm_squared();
                b.loss.map_or(s, |l| l.evaluate(s).0)
            })
            .collect();
        costs.iter().sum()
    }

    pub fn cost(&self) -> f64 {
        self.cost_at(&self.variables)
    }

    fn linearize(&self) -> Result<Linearization, SolverError> {
        let terms: Vec<Result<(f64, DVector<f64>, Vec<DMatrix<f64>>), SolverError>> = self
            .blocks
            .par_iter()
            .map(|b| {
                let vars = self.block_vars(&self.variables, b);
                let (mut r, mut jac) = b.function.evaluate(&vars, true);
                if jac.len() != vars.len() {
                    return Err(SolverError::InvalidProblem("jacobian count mismatch".into()));
                }
                for (j, v) in jac.iter().zip(&vars) {
                    if j.ncols() != v.dim() || j.nrows() != r.len() {
                        return Err(SolverError::InvalidProblem(format!(
                            "jacobian is {}x{}, expected {}x{}",
                            j.nrows(),
                            j.ncols(),
                            r.len(),
                            v.dim()
                        )));
                    }
                }
                let s = r.norm_squared();
                let cost = match b.loss {
                    Some(l) => {
                        let (rho, w) = l.evaluate(s);
                        let sw = w.sqrt();
                        r *= sw;
                        for j in jac.iter_mut() {
                            *j *= sw;
                        }
                        rho
                    }
                    None => s,
                };
                Ok((cost, r, jac))
            })
            .collect();
        let mut cost = 0.0;
        let mut out = Vec::with_capacity(terms.len());
        for t in terms {
            let (c, r, j) = t?;
            cost += c;
            out.push((r, j));
        }
        Ok(Linearization { cost, terms: out })
    }

    /// Gauss-Newton information matrix `JᵀWJ` and vector `JᵀWr` over the
    /// free variables at the current values, in variable order.
    pub fn marginal_info(&self) -> Result<(DMatrix<f64>, DVector<f64>), SolverError> {
        let (off, n) = self.offsets();
        let lin = self.linearize()?;
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for (b, (r, jac)) in self.blocks.iter().zip(&lin.terms) {
            for (a, ja) in b.vars.iter().zip(jac) {
                let Some(oa) = off[*a] else { continue };
                let da = ja.ncols();
                let jtr = ja.transpose() * r;
                let mut gv = g.rows_mut(oa, da);
                gv += &jtr;
                for (c, jc) in b.vars.iter().zip(jac) {
                    let Some(oc) = off[*c] else { continue };
                    let block = ja.transpose() * jc;
                    let mut view = h.view_mut((oa, oc), (da, jc.ncols()));
                    view += &block;
                }
            }
        }
        Ok((h, g))
    }

    fn envelope(&self, off: &[Option<usize>], n: usize) -> Vec<usize> {
        let mut first: Vec<usize> = (0..n).collect();
        for b in &self.blocks {
            let lo = b.vars.iter().filter_map(|&v| off[v]).min();
            let Some(lo) = lo else { continue };
            for &v in &b.vars {
                if let Some(o) = off[v] {
                    for row in o..o + self.variables[v].dim() {
                        first[row] = first[row].min(lo);
                    }
                }
            }
        }
        // rows inside one variable couple to all earlier rows of the same variable
        for (v, o) in off.iter().enumerate() {
            if let Some(o) = *o {
                let d = self.variables[v].dim();
                let f = first[o..o + d].iter().copied().min().unwrap_or(o).min(o);
                for row in o..o + d {
                    first[row] = first[row].min(f);
                }
            }
        }
        first
    }

    /// Solves `(H + μ·diag(H)) δ = −g`. Returns the step and the reduction
    /// predicted by the undamped quadratic model.
    fn solve_step(
        &self,
        lin: &Linearization,
        off: &[Option<usize>],
        n: usize,
        damping: f64,
        structure: &Option<Vec<usize>>,
    ) -> Option<(DVector<f64>, f64)> {
        let mut g = DVector::zeros(n);
        let mut diag = DVector::zeros(n);
        let step = match structure {
            None => {
                let mut h = DMatrix::<f64>::zeros(n, n);
                self.accumulate(lin, off, |i, j, v| h[(i, j)] += v, &mut g);
                for i in 0..n {
                    diag[i] = damping * h[(i, i)].clamp(1e-6, 1e32);
                    h[(i, i)] += diag[i];
                }
                nalgebra::Cholesky::new(h)?.solve(&(-&g))
            }
            Some(first) => {
                let mut h = SkylineMatrix::new(first.clone());
                self.accumulate(lin, off, |i, j, v| if j <= i { h.add(i, j, v) }, &mut g);
                for i in 0..n {
                    diag[i] = damping * h.diagonal(i).clamp(1e-6, 1e32);
                    h.add_diagonal(i, diag[i]);
                }
                h.cholesky()?.solve(&(-&g))
            }
        };
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }
        let predicted = 0.5 * (-g.dot(&step) + step.component_mul(&diag).dot(&step));
        Some((step, predicted))
    }

    fn accumulate<F: FnMut(usize, usize, f64)>(
        &self,
        lin: &Linearization,
        off: &[Option<usize>],
        mut add: F,
        g: &mut DVector<f64>,
    ) {
        for (b, (r, jac)) in self.blocks.iter().zip(&lin.terms) {
            for (a, ja) in b.vars.iter().zip(jac) {
                let Some(oa) = off[*a] else { continue };
                let jtr = ja.transpose() * r;
                for k in 0..jtr.len() {
                    g[oa + k] += jtr[k];
                }
                for (c, jc) in b.vars.iter().zip(jac) {
                    let Some(oc) = off[*c] else { continue };
                    let block = ja.transpose() * jc;
                    for i in 0..block.nrows() {
                        for j in 0..block.ncols() {
                            add(oa + i, oc + j, block[(i, j)]);
                        }
                    }
                }
            }
        }
    }

    fn gradient(&self, lin: &Linearization, off: &[Option<usize>], n: usize) -> DVector<f64> {
        let mut g = DVector::zeros(n);
        for (b, (r, jac)) in self.blocks.iter().zip(&lin.terms) {
            for (a, ja) in b.vars.iter().zip(jac) {
                if let Some(oa) = off[*a] {
                    let jtr = ja.transpose() * r;
                    let mut gv = g.rows_mut(oa, jtr.len());
                    gv += &jtr;
                }
            }
        }
        g
    }

    /// Largest absolute coordinate over all variables; scales the step test.
    fn magnitude(&self) -> f64 {
        self.variables
            .iter()
            .map(|v| match v {
                Variable::Vector(x) => x.amax(),
                Variable::Pose(p) => p.t.amax().max(1.0),
                Variable::State(s) => s.t.amax().max(s.v.amax()).max(1.0),
            })
            .fold(0.0, f64::max)
    }

    fn apply_step(&self, step: &DVector<f64>, off: &[Option<usize>]) -> Result<Vec<Variable>, GeometryError> {
        self.variables
            .iter()
            .zip(off)
            .map(|(v, o)| match o {
                Some(o) => v.plus(&step.as_slice()[*o..*o + v.dim()]),
                None => Ok(v.clone()),
            })
            .collect()
    }

    /// Minimizes `Σ ρ(‖r‖²)` with Levenberg-Marquardt. Variables are updated
    /// in place; they are left unchanged when an error is returned.
    pub fn solve(&mut self, opts: &SolverOptions) -> Result<SolveReport, SolverError> {
        let (off, n) = self.offsets();
        let structure = (n >= DENSE_LIMIT).then(|| self.envelope(&off, n));
        let mut lin = self.linearize()?;
        let initial_cost = lin.cost;
        let mut cost_history = vec![initial_cost];
        let mut damping = opts.initial_damping;
        let mut iterations = 0;
        let mut ever_solved = false;
        let termination;
        let mut gradient_norm;
        loop {
            let g = self.gradient(&lin, &off, n);
            gradient_norm = g.amax();
            if n == 0 || gradient_norm <= opts.gradient_tolerance {
                termination = Termination::Converged;
                break;
            }
            if iterations >= opts.max_iterations {
                termination = Termination::MaxIterations;
                break;
            }
            iterations += 1;
            let mut accepted = None;
            let mut small_step = false;
            let scale = self.magnitude();
            while damping <= MAX_DAMPING {
                let Some((step, predicted)) = self.solve_step(&lin, &off, n, damping, &structure) else {
                    damping *= 3.0;
                    continue;
                };
                ever_solved = true;
                if step.amax() <= opts.step_tolerance * (scale + opts.step_tolerance) {
                    small_step = true;
                    break;
                }
                let Ok(candidate) = self.apply_step(&step, &off) else {
                    damping *= 3.0;
                    continue;
                };
                let new_cost = self.cost_at(&candidate);
                if new_cost.is_finite() && new_cost < lin.cost {
                    let mut best = (candidate, new_cost);
                    // A near-exact quadratic model means the trust region can
                    // be dropped: try the full Gauss-Newton step as well.
                    let rho = (lin.cost - new_cost) / predicted.max(f64::MIN_POSITIVE);
                    if rho > GN_TRIAL_RATIO {
                        if let Some((gn, _)) = self.solve_step(&lin, &off, n, 0.0, &structure) {
                            if let Ok(c) = self.apply_step(&gn, &off) {
                                let cost = self.cost_at(&c);
                                if cost.is_finite() && cost < best.1 {
                                    best = (c, cost);
                                }
                            }
                        }
                    }
                    accepted = Some(best.0);
                    damping = (damping * 0.3).max(1e-12);
                    break;
                }
                damping *= 3.0;
            }
            if small_step {
                termination = Termination::Converged;
                break;
            }
            match accepted {
                Some(vars) => {
                    self.variables = vars;
                    lin = self.linearize()?;
                    cost_history.push(lin.cost);
                }
                None => {
                    if !ever_solved {
                        return Err(SolverError::NumericalFailure);
                    }
                    termination = Termination::TrustRegionCollapse;
                    break;
                }
            }
        }
        Ok(SolveReport {
            initial_cost,
            final_cost: lin.cost,
            iterations,
            termination,
            gradient_norm,
            cost_history,
        })
    }
}

/// Central-difference Jacobians of a residual function, for verification.
pub fn numeric_jacobians(f: &dyn ResidualFunction, vars: &[&Variable], h: f64) -> Vec<DMatrix<f64>> {
    let m = f.dim();
    vars.iter()
        .enumerate()
        .map(|(k, v)| {
            let d = v.dim();
            let mut jac = DMatrix::zeros(m, d);
            for c in 0..d {
                let mut delta = vec![0.0; d];
                delta[c] = h;
                let plus = v.plus(&delta).expect("finite-difference step");
                delta[c] = -h;
                let minus = v.plus(&delta).expect("finite-difference step");
                let mut vp: Vec<&Variable> = vars.to_vec();
                vp[k] = &plus;
                let rp = f.evaluate(&vp, false).0;
                vp[k] = &minus;
                let rm = f.evaluate(&vp, false).0;
                jac.set_column(c, &((rp - rm) / (2.0 * h)));
            }
            jac
        })
        .collect()
}

/// Largest absolute difference between analytic and central-difference
/// Jacobians of `f` at `vars`.
pub fn jacobian_error(f: &dyn ResidualFunction, vars: &[&Variable], h: f64) -> f64 {
    let (_, analytic) = f.evaluate(vars, true);
    let numeric = numeric_jacobians(f, vars, h);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).amax())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Linear {
        a: DMatrix<f64>,
        b: DVector<f64>,
    }

    impl ResidualFunction for Linear {
        fn dim(&self) -> usize {
            self.a.nrows()
        }
        fn evaluate(&self, vars: &[&Variable], with_jacobians: bool) -> (DVector<f64>, Vec<DMatrix<f64>>) {
            let x = vars[0].vector().unwrap();
            let r = &self.a * x - &self.b;
            (r, if with_jacobians { vec![self.a.clone()] } else { vec![] })
        }
    }

    struct Rosenbrock;

    impl ResidualFunction for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn evaluate(&self, vars: &[&Variable], with_jacobians: bool) -> (DVector<f64>, Vec<DMatrix<f64>>) {
            let x = vars[0].vector().unwrap();
            let r = DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
            let j = DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]);
            (r, if with_jacobians { vec![j] } else { vec![] })
        }
    }

    fn random_linear(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Linear {
        Linear {
            a: DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0)),
            b: DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn linear_least_squares_matches_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lin = random_linear(&mut rng, 12, 4);
        let oracle = lin.a.clone().pseudo_inverse(1e-14).unwrap() * &lin.b;
        let mut p = Problem::new();
        let x = p.add_variable(Variable::Vector(DVector::zeros(4)));
        p.add_block(vec![x], Box::new(lin), None).unwrap();
        let report = p.solve(&SolverOptions::default()).unwrap();
        let got = p.variable(x).vector().unwrap();
        assert!((got - oracle).amax() < 1e-10);
        assert_eq!(report.iterations, 1, "{report:?}");
        assert!(report.final_cost <= report.initial_cost);
    }

    #[test]
    fn zero_residual_start_takes_no_iterations() {
        let a = DMatrix::identity(3, 3);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let mut p = Problem::new();
        let x = p.add_variable(Variable::Vector(b.clone()));
        p.add_block(vec![x], Box::new(Linear { a, b }), None).unwrap();
        let r = p.solve(&SolverOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.termination, Termination::Converged);
    }

    #[test]
    fn rosenbrock_reaches_global_minimum() {
        let mut p = Problem::new();
        let x = p.add_variable(Variable::Vector(DVector::from_vec(vec![-1.2, 1.0])));
        p.add_block(vec![x], Box::new(Rosenbrock), None).unwrap();
        let r = p.solve(&SolverOptions { max_iterations: 200, ..Default::default() }).unwrap();
        let v = p.variable(x).vector().unwrap();
        assert!((v[0] - 1.0).abs() < 1e-8 && (v[1] - 1.0).abs() < 1e-8, "{v:?} {r:?}");
        assert!(r.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn marginal_info_matches_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut p = Problem::new();
        let x = p.add_variable(Variable::Vector(DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0))));
        let y = p.add_variable(Variable::Vector(DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))));
        let l1 = random_linear(&mut rng, 4, 3);
        let l2 = random_linear(&mut rng, 5, 2);
        // a coupling block over both variables
        let l3 = random_linear(&mut rng, 6, 5);
        struct Joint(Linear);
        impl ResidualFunction for Joint {
            fn dim(&self) -> usize {
                self.0.a.nrows()
            }
            fn evaluate(&self, vars: &[&Variable], wj: bool) -> (DVector<f64>, Vec<DMatrix<f64>>) {
                let a = vars[0].vector().unwrap();
                let b = vars[1].vector().unwrap();
                let mut z = DVector::zeros(5);
                z.rows_mut(0, 3).copy_from(a);
                z.rows_mut(3, 2).copy_from(b);
                let r = &self.0.a * z - &self.0.b;
                let j = if wj {
                    vec![self.0.a.columns(0, 3).into_owned(), self.0.a.columns(3, 2).into_owned()]
                } else {
                    vec![]
                };
                (r, j)
            }
        }
        let mut big = DMatrix::zeros(15, 5);
        big.view_mut((0, 0), (4, 3)).copy_from(&l1.a);
        big.view_mut((4, 3), (5, 2)).copy_from(&l2.a);
        big.view_mut((9, 0), (6, 5)).copy_from(&l3.a);
        p.add_block(vec![x], Box::new(l1), None).unwrap();
        p.add_block(vec![y], Box::new(l2), None).unwrap();
        p.add_block(vec![x, y], Box::new(Joint(l3)), None).unwrap();
        let (h, _) = p.marginal_info().unwrap();
        let want = big.transpose() * &big;
        assert!((h - want).amax() < 1e-12);
    }

    #[test]
    fn independent_blocks_give_block_diagonal_information() {
        let mut p = Problem::new();
        let x = p.add_variable(Variable::Vector(DVector::zeros(2)));
        let y = p.add_variable(Variable::Vector(DVector::zeros(2)));
        let id = || Linear { a: DMatrix::identity(2, 2), b: DVector::zeros(2) };
        p.add_block(vec![x], Box::new(id()), None).unwrap();
        let (h, _) = p.marginal_info().unwrap();
        assert!((h.view((0, 0), (2, 2)) - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
        p.add_block(vec![y], Box::new(id()), None).unwrap();
        let (h, _) = p.marginal_info().unwrap();
        assert!((h - DMatrix::<f64>::identity(4, 4)).amax() < 1e-15);
    }

    #[test]
    fn quadratic_convergence_on_consistent_linear_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut lin = random_linear(&mut rng, 8, 3);
        let truth = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        lin.b = &lin.a * &truth;
        let mut p = Problem::new();
        let x = p.add_variable(Variable::Vector(DVector::zeros(3)));
        p.add_block(vec![x], Box::new(lin), None).unwrap();
        let r = p.solve(&SolverOptions { gradient_tolerance: 1e-14, ..Default::default() }).unwrap();
        let h = &r.cost_history;
        assert!(h.len() >= 2);
        for w in h.windows(2).rev().take(2) {
            assert!(w[1] < 0.1 * w[0] || w[1] < 1e-25, "{h:?}");
        }
    }

    #[test]
    fn bad_variable_index_rejected() {
        let mut p = Problem::new();
        let e = p.add_block(vec![3], Box::new(Rosenbrock), None);
        assert!(matches!(e, Err(SolverError::InvalidProblem(_))));
    }

    #[test]
    fn skyline_path_solves_large_loop() {
        // n two-dimensional variables joined by "+c" increments around a closed
        // loop: the least-squares increments are all zero, so from a random
        // start every free variable must return to the fixed anchor at 0.
        struct Diff;
        impl ResidualFunction for Diff {
            fn dim(&self) -> usize {
                2
            }
            fn evaluate(&self, v: &[&Variable], wj: bool) -> (DVector<f64>, Vec<DMatrix<f64>>) {
                let a = v[0].vector().unwrap();
                let b = v[1].vector().unwrap();
                let r = b - a - DVector::from_vec(vec![1.0, 0.5]);
                let j = if wj { vec![-DMatrix::identity(2, 2), DMatrix::identity(2, 2)] } else { vec![] };
                (r, j)
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for n in [60, 200] {
            let mut p = Problem::new();
            let ids: Vec<usize> = (0..n)
                .map(|i| {
                    let init = if i == 0 { DVector::zeros(2) } else { DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0)) };
                    p.add_variable(Variable::Vector(init))
                })
                .collect();
            p.set_fixed(ids[0], true);
            for w in ids.windows(2) {
                p.add_block(vec![w[0], w[1]], Box::new(Diff), None).unwrap();
            }
            p.add_block(vec![ids[n - 1], ids[0]], Box::new(Diff), None).unwrap();
            assert_eq!(p.offsets().1 >= DENSE_LIMIT, n == 200);
            p.solve(&SolverOptions::default()).unwrap();
            for &i in &ids {
                assert!(p.variable(i).vector().unwrap().amax() < 1e-8, "n={n} var {i}");
            }
        }
    }
}
