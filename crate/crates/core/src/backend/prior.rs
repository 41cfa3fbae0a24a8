//! Schur-complement marginalization and the square-root prior it yields.

use super::BackendError;
use crate::solver::{Problem, ResidualFunction, Variable};
use nalgebra::{DMatrix, DVector};

/// Gaussian prior `‖r + J·[x_k ⊟ x̄_k]_k‖²` over a fixed list of variables,
/// linearized once at `x̄` (first-estimate Jacobians).
#[derive(Debug, Clone, PartialEq)]
pub struct PriorFactor {
    pub linearization: Vec<Variable>,
    pub sqrt_info: DMatrix<f64>,
    pub residual: DVector<f64>,
}

/// Eigenvalues below this fraction of the largest are treated as zero when
/// factoring the prior information.
const RANK_EPS: f64 = 1e-12;
/// Diagonal floor added to the marginalized block before inversion.
pub const MARGINAL_FLOOR: f64 = 1e-9;

impl PriorFactor {
    /// Square-root form of the information pair `(H, g)` with `g = Jᵀr`:
    /// `H = V Λ Vᵀ`, `J = Λ^½ Vᵀ`, `r = Λ^-½ Vᵀ g`.
    pub fn from_information(linearization: Vec<Variable>, h: &DMatrix<f64>, g: &DVector<f64>) -> Self {
        let n = h.nrows();
        let sym = 0.5 * (h + h.transpose());
        let eig = nalgebra::SymmetricEigen::new(sym);
        let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > RANK_EPS * max && eig.eigenvalues[i] > 0.0).collect();
        let mut j = DMatrix::zeros(keep.len(), n);
        let mut r = DVector::zeros(keep.len());
        for (row, &i) in keep.iter().enumerate() {
            let s = eig.eigenvalues[i].sqrt();
            let v = eig.eigenvectors.column(i);
            for c in 0..n {
                j[(row, c)] = s * v[c];
            }
            r[row] = v.dot(g) / s;
        }
        Self { linearization, sqrt_info: j, residual: r }
    }

    /// `(JᵀJ, Jᵀr)` at the linearization point.
    pub fn information(&self) -> (DMatrix<f64>, DVector<f64>) {
        (self.sqrt_info.transpose() * &self.sqrt_info, self.sqrt_info.transpose() * &self.residual)
    }

    pub fn tangent_dim(&self) -> usize {
        self.linearization.iter().map(Variable::dim).sum()
    }
}

impl ResidualFunction for PriorFactor {
    fn dim(&self) -> usize {
        self.sqrt_info.nrows()
    }

    fn evaluate(&self, vars: &[&Variable], with_jacobians: bool) -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let n = self.tangent_dim();
        let mut dx = DVector::zeros(n);
        let mut o = 0;
        for (v, lin) in vars.iter().zip(&self.linearization) {
            let d = v.minus(lin);
            dx.rows_mut(o, d.len()).copy_from(&d);
            o += d.len();
        }
        let r = &self.residual + &self.sqrt_info * dx;
        let mut jac = Vec::new();
        if with_jacobians {
            let mut o = 0;
            for lin in &self.linearization {
                let d = lin.dim();
                jac.push(self.sqrt_info.columns(o, d).into_owned());
                o += d;
            }
        }
        (r, jac)
    }
}

/// `H' = H_rr − H_rm H_mm⁻¹ H_mr`, `g' = g_r − H_rm H_mm⁻¹ g_m`, where the
/// first `m` rows/columns are marginalized.
pub fn schur_complement(h: &DMatrix<f64>, g: &DVector<f64>, m: usize) -> Result<(DMatrix<f64>, DVector<f64>), BackendError> {
    let n = h.nrows();
    let r = n - m;
    let mut hmm = h.view((0, 0), (m, m)).into_owned();
    hmm = 0.5 * (&hmm + hmm.transpose());
    for i in 0..m {
        hmm[(i, i)] += MARGINAL_FLOOR;
    }
    let chol = nalgebra::Cholesky::new(hmm).ok_or(BackendError::SingularBlock)?;
    let hrm = h.view((m, 0), (r, m));
    let hmr = h.view((0, m), (m, r)).into_owned();
    let x = chol.solve(&hmr);
    let gm = g.rows(0, m).into_owned();
    let y = chol.solve(&gm);
    let hp = h.view((m, m), (r, r)) - hrm * x;
    let gp = g.rows(m, r) - hrm * y;
    Ok((0.5 * (&hp + hp.transpose()), gp))
}

/// Marginalizes the listed variables out of `problem` at its current
/// values. Returns the prior over the remaining free variables, in index
/// order, together with those indices.
pub fn marginalize(problem: &Problem, marginalized: &[usize]) -> Result<(PriorFactor, Vec<usize>), BackendError> {
    let (off, _) = problem.offsets();
    let (h, g) = problem.marginal_info()?;
    let free: Vec<usize> = (0..problem.variables().len()).filter(|&i| off[i].is_some()).collect();
    let retained: Vec<usize> = free.iter().copied().filter(|i| !marginalized.contains(i)).collect();
    let mut order = Vec::new();
    let mut m = 0;
    for &i in marginalized {
        let o = off[i].ok_or_else(|| BackendError::InvalidWindow(format!("variable {i} is fixed")))?;
        let d = problem.variable(i).dim();
        order.extend(o..o + d);
        m += d;
    }
    for &i in &retained {
        let o = off[i].unwrap();
        order.extend(o..o + problem.variable(i).dim());
    }
    let hp = DMatrix::from_fn(order.len(), order.len(), |a, b| h[(order[a], order[b])]);
    let gp = DVector::from_fn(order.len(), |a, _| g[order[a]]);
    let (hr, gr) = schur_complement(&hp, &gp, m)?;
    let lin = retained.iter().map(|&i| problem.variable(i).clone()).collect();
    Ok((PriorFactor::from_information(lin, &hr, &gr), retained))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n + 2, n, |_, _| rng.random_range(-1.0..1.0));
        a.transpose() * a
    }

    #[test]
    fn sqrt_form_reproduces_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = spd(&mut rng, 6);
        let g = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let lin = vec![Variable::Vector(DVector::zeros(6))];
        let p = PriorFactor::from_information(lin, &h, &g);
        let (h2, g2) = p.information();
        assert!((h2 - &h).amax() < 1e-10);
        assert!((g2 - &g).amax() < 1e-10);
    }

    #[test]
    fn schur_matches_dense_inverse() {
        // marginal covariance of the retained block equals the corresponding
        // block of the joint covariance
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = spd(&mut rng, 7);
        let g = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
        let (hp, gp) = schur_complement(&h, &g, 3).unwrap();
        let cov = h.clone().try_inverse().unwrap();
        let cov_r = cov.view((3, 3), (4, 4)).into_owned();
        let hp_inv = hp.clone().try_inverse().unwrap();
        let d = (hp_inv - &cov_r).amax();
        assert!(d < 1e-8 * cov_r.amax().max(1.0), "{d} {}", cov_r.amax());
        // the retained part of the joint mean is preserved
        let mean = -(&cov * &g);
        let mean_r = -(hp.try_inverse().unwrap() * gp);
        let d = (mean_r - mean.rows(3, 4)).amax();
        assert!(d < 1e-8 * mean.amax().max(1.0), "{d} {}", mean.amax());
    }

    #[test]
    fn singular_block_is_reported() {
        let mut h = DMatrix::<f64>::identity(4, 4);
        h[(0, 0)] = -1.0;
        assert_eq!(schur_complement(&h, &DVector::zeros(4), 2), Err(BackendError::SingularBlock));
    }
}
