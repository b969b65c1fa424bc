//! l1-regularized least squares.
//!
//! Objective convention: `f(x) = ||y - D x||_2^2 + lambda ||x||_1` (no 1/2 on
//! the fit term), so an orthonormal dictionary has the closed-form solution
//! `soft_threshold(D^T y, lambda / 2)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITERS: usize = 500;
const POWER_ITERS: usize = 50;
const POWER_TOL: f64 = 1e-9;

/// A dictionary whose atoms (columns) have norm at most `1 + 1e-9`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary(DMatrix<f64>);

impl Dictionary {
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dictionary has non-finite entries".into()));
        }
        if let Some(k) = atoms.column_iter().position(|c| c.norm() > 1.0 + 1e-9) {
            return Err(Error::InvalidInput(format!("atom {k} has norm above 1")));
        }
        Ok(Self(atoms))
    }

    /// Rescales every nonzero column to unit norm.
    pub fn normalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        for mut c in atoms.column_iter_mut() {
            let n = c.norm();
            if n > 0.0 {
                c /= n;
            }
        }
        Self::new(atoms)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

pub fn soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    v.map(|x| soft(x, t))
}

#[inline]
pub fn soft(x: f64, t: f64) -> f64 {
    let m = x.abs() - t;
    if m > 0.0 {
        m.copysign(x)
    } else {
        0.0
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power iteration.
pub fn largest_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    let n = sym.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i % 7) as f64);
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let w = sym * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let done = (next - lambda).abs() <= POWER_TOL * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    // Rayleigh quotients approach from below; one more product tightens the estimate
    lambda.max(v.dot(&(sym * &v)))
}

#[derive(Debug, Clone, Copy)]
pub struct LassoOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoResult {
    pub code: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted iterate, starting with the initial point.
    pub trace: Vec<f64>,
}

/// `x^T H x - 2 c^T x + constant + lambda ||x||_1` with `H` symmetric PSD.
#[derive(Debug, Clone)]
pub struct QuadraticL1<'a> {
    pub hessian: &'a DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub lambda: f64,
    /// Largest eigenvalue of `hessian`.
    pub lipschitz: f64,
}

impl QuadraticL1<'_> {
    pub fn smooth(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(self.hessian * x)) - 2.0 * self.linear.dot(x) + self.constant
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.smooth(x) + self.lambda * x.lp_norm(1)
    }

    fn prox_grad_step(&self, z: &DVector<f64>) -> DVector<f64> {
        // gradient 2(Hz - c), step 1/(2L)
        let step = 0.5 / self.lipschitz;
        let g = (self.hessian * z - &self.linear) * 2.0;
        (z - g * step).map(|v| soft(v, self.lambda * step))
    }
}

/// Accelerated proximal gradient with momentum restart whenever the objective
/// would go up, so accepted iterates are monotone.
pub fn solve_quadratic_l1(p: &QuadraticL1<'_>, opts: &LassoOptions) -> LassoResult {
    let k = p.linear.len();
    let mut x = DVector::zeros(k);
    let mut f = p.objective(&x);
    let mut trace = vec![f];
    if p.lipschitz <= 0.0 || is_zero_optimal(p) {
        return LassoResult { code: x, objective: f, iterations: 0, converged: true, trace };
    }
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iters {
        iterations = it + 1;
        let mut next = p.prox_grad_step(&z);
        let mut f_next = p.objective(&next);
        let mut restarted = false;
        if f_next > f {
            t = 1.0;
            restarted = true;
            next = p.prox_grad_step(&x);
            f_next = p.objective(&next);
            if f_next > f {
                converged = true;
                break;
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &x) * ((t - 1.0) / t_next);
        let rel = (f - f_next) / f.abs().max(f64::MIN_POSITIVE);
        x = next;
        f = f_next;
        t = t_next;
        trace.push(f);
        if rel < opts.tol && !restarted {
            converged = true;
            break;
        }
    }
    LassoResult { code: x, objective: f, iterations, converged, trace }
}

/// Zero is a minimizer exactly when `2 |c|_inf <= lambda`.
fn is_zero_optimal(p: &QuadraticL1<'_>) -> bool {
    p.linear.amax() * 2.0 <= p.lambda
}

/// Lasso over a fixed dictionary with the Gram matrix and step size cached.
#[derive(Debug, Clone)]
pub struct LassoSolver<'a> {
    dict: &'a DMatrix<f64>,
    gram: DMatrix<f64>,
    lipschitz: f64,
}

impl<'a> LassoSolver<'a> {
    pub fn new(dict: &'a Dictionary) -> Self {
        Self::from_matrix(dict.matrix())
    }

    pub(crate) fn from_matrix(dict: &'a DMatrix<f64>) -> Self {
        let gram = dict.tr_mul(dict);
        let lipschitz = largest_eigenvalue(&gram);
        Self { dict, gram, lipschitz }
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn problem(&self, y: &DVector<f64>, lambda: f64) -> Result<QuadraticL1<'_>> {
        if y.len() != self.dict.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "signal has length {}, dictionary dimension is {}",
                y.len(),
                self.dict.nrows()
            )));
        }
        if !lambda.is_finite() || lambda < 0.0 || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("lasso needs finite y and lambda >= 0".into()));
        }
        Ok(QuadraticL1 {
            hessian: &self.gram,
            linear: self.dict.tr_mul(y),
            constant: y.norm_squared(),
            lambda,
            lipschitz: self.lipschitz,
        })
    }

    pub fn solve(&self, y: &DVector<f64>, lambda: f64, opts: &LassoOptions) -> Result<LassoResult> {
        Ok(solve_quadratic_l1(&self.problem(y, lambda)?, opts))
    }
}

pub fn lasso_objective(d: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>, lambda: f64) -> f64 {
    (y - d * x).norm_squared() + lambda * x.lp_norm(1)
}

pub fn lasso(dict: &Dictionary, y: &DVector<f64>, lambda: f64, opts: &LassoOptions) -> Result<LassoResult> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    LassoSolver::new(dict).solve(y, lambda, opts)
}

/// Column-wise lasso; columns are solved independently so the result does
/// not depend on the number of worker threads.
pub fn lasso_batch(dict: &Dictionary, ys: &DMatrix<f64>, lambda: f64, opts: &LassoOptions) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let solver = LassoSolver::new(dict);
    let cols: Vec<DVector<f64>> = (0..ys.ncols())
        .into_par_iter()
        .map(|j| solver.solve(&ys.column(j).into_owned(), lambda, opts).map(|r| r.code))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(dict.n_atoms(), ys.ncols(), |i, j| cols[j][i]))
}

/// Squared Frobenius norm of `Y - D X`.
pub fn residual(d: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if d.ncols() != x.nrows() || d.nrows() != y.nrows() || x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "D {}x{}, X {}x{}, Y {}x{}",
            d.nrows(),
            d.ncols(),
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    Ok((y - d * x).norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn soft_threshold_examples() {
        let v = DVector::from_vec(vec![3.0, -0.5, 0.0]);
        assert_eq!(soft_threshold(&v, 1.0), DVector::from_vec(vec![2.0, 0.0, 0.0]));
        assert_eq!(soft_threshold(&v, 0.0), v);
        assert_eq!(soft_threshold(&v, 3.0), DVector::zeros(3));
    }

    #[test]
    fn zero_signal_gives_zero_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dictionary::normalized(randn(&mut rng, 8, 12)).unwrap();
        let r = lasso(&d, &DVector::zeros(8), 0.3, &LassoOptions::default()).unwrap();
        assert_eq!(r.code, DVector::zeros(12));
    }

    #[test]
    fn large_lambda_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let d = Dictionary::normalized(randn(&mut rng, 6, 10)).unwrap();
            let y = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let lam = 2.0 * d.matrix().tr_mul(&y).amax() * (1.0 + rng.random::<f64>());
            let r = lasso(&d, &y, lam, &LassoOptions::default()).unwrap();
            assert_eq!(r.code, DVector::zeros(10));
        }
    }

    #[test]
    fn objective_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let d = Dictionary::normalized(randn(&mut rng, 20, 40)).unwrap();
            let y = DVector::from_fn(20, |_, _| rng.sample::<f64, _>(StandardNormal));
            let r = lasso(&d, &y, 0.1, &LassoOptions { max_iters: 2000, tol: 1e-12 }).unwrap();
            for w in r.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            assert!(r.objective <= y.norm_squared());
        }
    }

    #[test]
    fn permuting_atoms_permutes_the_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Dictionary::normalized(randn(&mut rng, 15, 25)).unwrap();
        let y = DVector::from_fn(15, |_, _| rng.sample::<f64, _>(StandardNormal));
        let perm: Vec<usize> = (0..25).rev().collect();
        let dp = Dictionary::new(DMatrix::from_fn(15, 25, |i, j| d.matrix()[(i, perm[j])])).unwrap();
        let opts = LassoOptions { max_iters: 20_000, tol: 1e-14 };
        let a = lasso(&d, &y, 0.2, &opts).unwrap();
        let b = lasso(&dp, &y, 0.2, &opts).unwrap();
        for j in 0..25 {
            assert!((b.code[j] - a.code[perm[j]]).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_equals_columnwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Dictionary::normalized(randn(&mut rng, 10, 16)).unwrap();
        let y = randn(&mut rng, 10, 7);
        let opts = LassoOptions::default();
        let xb = lasso_batch(&d, &y, 0.3, &opts).unwrap();
        for j in 0..7 {
            let yj = y.column(j).into_owned();
            let xj = lasso(&d, &yj, 0.3, &opts).unwrap().code;
            assert_eq!(xb.column(j).into_owned(), xj);
            let ob = lasso_objective(d.matrix(), &yj, &xb.column(j).into_owned(), 0.3);
            let oc = lasso_objective(d.matrix(), &yj, &xj, 0.3);
            assert!((ob - oc).abs() <= 1e-10);
        }
        let single = lasso_batch(&d, &y.columns(0, 1).into_owned(), 0.3, &opts).unwrap();
        assert_eq!(single.column(0), xb.column(0));
        let twin = DMatrix::from_columns(&[y.column(2), y.column(2)]);
        let xt = lasso_batch(&d, &twin, 0.3, &opts).unwrap();
        assert_eq!(xt.column(0), xt.column(1));
    }

    #[test]
    fn residual_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = randn(&mut rng, 5, 4);
        let x = randn(&mut rng, 4, 3);
        let y = &d * &x;
        assert!(residual(&d, &x, &y).unwrap() < 1e-24);
        assert!((residual(&d, &DMatrix::zeros(4, 3), &y).unwrap() - y.norm_squared()).abs() < 1e-12);
        let yr = randn(&mut rng, 5, 3);
        let mut direct = 0.0;
        for i in 0..5 {
            for j in 0..3 {
                let mut dx = 0.0;
                for k in 0..4 {
                    dx += d[(i, k)] * x[(k, j)];
                }
                direct += (yr[(i, j)] - dx).powi(2);
            }
        }
        assert!((residual(&d, &x, &yr).unwrap() - direct).abs() < 1e-12);
        assert!(matches!(residual(&d, &x, &DMatrix::zeros(4, 3)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn rejects_non_finite_input() {
        let d = Dictionary::normalized(DMatrix::identity(3, 3)).unwrap();
        let y = DVector::from_vec(vec![1.0, f64::NAN, 0.0]);
        assert!(matches!(lasso(&d, &y, 0.1, &LassoOptions::default()), Err(Error::InvalidInput(_))));
    }
}
