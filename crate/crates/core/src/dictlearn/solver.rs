//! Monotone accelerated proximal gradient for one block of variables whose
//! smooth part is a convex quadratic, i.e. whose gradient is affine.

use nalgebra::DMatrix;

fn dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) struct BlockOutcome {
    pub x: DMatrix<f64>,
    pub settled: bool,
}

/// Minimizes `q(Z) + penalty(Z)` starting from `x0`, where `grad` is the
/// affine gradient of the quadratic `q`, `prox(V, step)` the proximal map of
/// `step * penalty` and `lipschitz` an upper bound on the curvature of `q`.
///
/// The value of `q` up to a constant is recovered from the gradient as
/// `0.5 <Z, grad(Z) + grad(0)>`, and the iterate is only replaced when that
/// value plus the penalty does not go up (MFISTA), so the returned point is
/// never worse than `x0`.
pub(crate) fn minimize_block(
    x0: DMatrix<f64>,
    grad: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    prox: impl Fn(DMatrix<f64>, f64) -> DMatrix<f64>,
    penalty: impl Fn(&DMatrix<f64>) -> f64,
    lipschitz: f64,
    iters: usize,
) -> BlockOutcome {
    if !(lipschitz > 0.0) || !lipschitz.is_finite() || iters == 0 {
        return BlockOutcome { x: x0, settled: true };
    }
    let step = 1.0 / lipschitz;
    let g_zero = grad(&DMatrix::zeros(x0.nrows(), x0.ncols()));
    let value = |z: &DMatrix<f64>, gz: &DMatrix<f64>| 0.5 * (dot(z, gz) + dot(z, &g_zero)) + penalty(z);

    let mut x = x0;
    let mut gx = grad(&x);
    let mut fx = value(&x, &gx);
    let mut x_prev = x.clone();
    let mut gx_prev = gx.clone();
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut t = 1.0f64;
    let mut settled = false;

    for _ in 0..iters {
        let z = prox(&y - &gy * step, step);
        let gz = grad(&z);
        let fz = value(&z, &gz);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved = (&z - &y).norm();
        x_prev.clone_from(&x);
        gx_prev.clone_from(&gx);
        let accepted = fz <= fx;
        let gain = fx - fz;
        if accepted {
            x = z.clone();
            gx = gz.clone();
            fx = fz;
        }
        // y = x + (t/t')(z - x) + ((t-1)/t')(x - x_prev); gradients follow the same affine combination
        let a = t / t_next;
        let b = (t - 1.0) / t_next;
        y = &x + (&z - &x) * a + (&x - &x_prev) * b;
        gy = &gx + (&gz - &gx) * a + (&gx - &gx_prev) * b;
        t = t_next;
        if moved <= 1e-14 * (1.0 + x.norm()) || (accepted && gain <= 1e-12 * fx.abs()) {
            settled = true;
            break;
        }
    }
    BlockOutcome { x, settled }
}

/// Projects every column onto the unit ball.
pub(crate) fn project_columns(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        if n > 1.0 {
            c /= n;
        }
    }
    m
}

/// Singular-value soft thresholding.
pub(crate) fn shrink_singular_values(m: DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return m;
    }
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let s = svd.singular_values.map(|v| (v - tau).max(0.0));
    u * DMatrix::from_diagonal(&s) * vt
}

pub(crate) fn l1(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsecode::soft;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn matches_closed_form_on_separable_problem() {
        // q(Z) = 0.5 * ||Z - A||^2 with l1 penalty: minimizer is soft(A, lambda)
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(4, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lam = 0.3;
        let out = minimize_block(
            DMatrix::zeros(4, 3),
            |z| z - &a,
            |v, s| v.map(|x| soft(x, lam * s)),
            |z| lam * l1(z),
            1.0,
            50,
        );
        let expected = a.map(|x| soft(x, lam));
        assert!((out.x - expected).amax() < 1e-12);
    }

    #[test]
    fn never_worse_than_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let b = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let h = b.tr_mul(&b);
            let c = DMatrix::from_fn(6, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x0 = DMatrix::from_fn(6, 2, |_, _| rng.random::<f64>());
            let f = |z: &DMatrix<f64>| 0.5 * dot(z, &(&h * z)) - dot(z, &c) + 0.1 * l1(z);
            // deliberately underestimated curvature
            let lip = 0.3 * crate::sparsecode::largest_eigenvalue(&h);
            let out = minimize_block(
                x0.clone(),
                |z| &h * z - &c,
                |v, s| v.map(|x| soft(x, 0.1 * s)),
                |z| 0.1 * l1(z),
                lip,
                30,
            );
            assert!(f(&out.x) <= f(&x0) + 1e-12);
        }
    }

    #[test]
    fn svt_shrinks_spectrum() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 0.2]));
        let s = shrink_singular_values(m, 0.5).singular_values();
        let mut v: Vec<f64> = s.iter().cloned().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        assert!((v[0] - 2.5).abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-12 && v[2].abs() < 1e-12);
    }
}
