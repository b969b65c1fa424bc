//! Objective evaluators and the analytic gradients of their smooth parts.
//!
//! The fidelity term `g` is the sum over classes of
//! `||Y_c - D X_c||^2 + ||Y_c - D_c X_c^c - D_0 X_c^0||^2 + leakage_c`, where
//! the `D_0` part only appears when a shared dictionary exists and the
//! leakage is `sum_{j != c} ||D_j X_c^j||^2` (FDDL, LRSDL) or
//! `sum_{j != c} ||X_c^j||^2` (COPAR).

use std::ops::{AddAssign, SubAssign};

use nalgebra::DMatrix;

use super::{column_mean, select_columns, Algorithm, CodeBlock, StructuredDictionary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leakage {
    /// `||D_j X_c^j||_F^2`
    Reconstruction,
    /// `||X_c^j||_F^2`
    Coefficient,
}

/// Which penalty terms an algorithm's objective contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub leakage: Leakage,
    pub fisher: bool,
    pub shared_scatter: bool,
    pub incoherence: bool,
    pub nuclear: bool,
}

impl Terms {
    pub fn of(algorithm: Algorithm) -> Self {
        match algorithm {
            Algorithm::Fddl => Terms {
                leakage: Leakage::Reconstruction,
                fisher: true,
                shared_scatter: false,
                incoherence: false,
                nuclear: false,
            },
            Algorithm::Copar => Terms {
                leakage: Leakage::Coefficient,
                fisher: false,
                shared_scatter: false,
                incoherence: true,
                nuclear: false,
            },
            Algorithm::Lrsdl => Terms {
                leakage: Leakage::Reconstruction,
                fisher: true,
                shared_scatter: true,
                incoherence: false,
                nuclear: true,
            },
        }
    }
}

fn check_shapes(y: &DMatrix<f64>, dict: &StructuredDictionary, codes: &CodeBlock) -> Result<()> {
    if y.nrows() != dict.dim() {
        return Err(Error::ShapeMismatch(format!(
            "samples have dimension {}, dictionary {}",
            y.nrows(),
            dict.dim()
        )));
    }
    if codes.layout != dict.layout() {
        return Err(Error::ShapeMismatch("code layout does not match the dictionary".into()));
    }
    if codes.x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} codes for {} samples",
            codes.x.ncols(),
            y.ncols()
        )));
    }
    Ok(())
}

/// Residual of the own-class (plus shared) reconstruction for class `c`.
fn own_residual(dict: &StructuredDictionary, codes: &CodeBlock, yc: &DMatrix<f64>, xc: &DMatrix<f64>, c: usize) -> DMatrix<f64> {
    let r = &codes.layout.class_rows[c];
    let mut res = yc - &dict.class_dicts[c] * xc.rows(r.start, r.len());
    if let (Some(d0), Some(r0)) = (&dict.shared, &codes.layout.shared_rows) {
        res -= d0 * xc.rows(r0.start, r0.len());
    }
    res
}

/// The fidelity term `g(Y, D, X)`.
pub fn fidelity(terms: &Terms, y: &DMatrix<f64>, dict: &StructuredDictionary, codes: &CodeBlock) -> Result<f64> {
    check_shapes(y, dict, codes)?;
    let full = dict.full();
    let mut total = 0.0;
    for (c, cols) in codes.class_cols.iter().enumerate() {
        let yc = select_columns(y, cols);
        let xc = select_columns(&codes.x, cols);
        total += (&yc - &full * &xc).norm_squared();
        total += own_residual(dict, codes, &yc, &xc, c).norm_squared();
        for (j, r) in codes.layout.class_rows.iter().enumerate() {
            if j == c {
                continue;
            }
            let xj = xc.rows(r.start, r.len());
            total += match terms.leakage {
                Leakage::Reconstruction => (&dict.class_dicts[j] * xj).norm_squared(),
                Leakage::Coefficient => xj.norm_squared(),
            };
        }
    }
    Ok(total)
}

/// Gradient of `g` with respect to the stacked code matrix.
pub fn fidelity_grad_x(terms: &Terms, y: &DMatrix<f64>, dict: &StructuredDictionary, codes: &CodeBlock) -> Result<DMatrix<f64>> {
    check_shapes(y, dict, codes)?;
    let full = dict.full();
    let layout = &codes.layout;
    let mut grad = DMatrix::zeros(codes.x.nrows(), codes.x.ncols());
    for (c, cols) in codes.class_cols.iter().enumerate() {
        let yc = select_columns(y, cols);
        let xc = select_columns(&codes.x, cols);
        let mut gc = full.tr_mul(&(&full * &xc - &yc)) * 2.0;
        let own = own_residual(dict, codes, &yc, &xc, c);
        let r = &layout.class_rows[c];
        gc.rows_mut(r.start, r.len()).sub_assign(&(dict.class_dicts[c].tr_mul(&own) * 2.0));
        if let (Some(d0), Some(r0)) = (&dict.shared, &layout.shared_rows) {
            gc.rows_mut(r0.start, r0.len()).sub_assign(&(d0.tr_mul(&own) * 2.0));
        }
        for (j, rj) in layout.class_rows.iter().enumerate() {
            if j == c {
                continue;
            }
            let xj = xc.rows(rj.start, rj.len()).into_owned();
            let leak = match terms.leakage {
                Leakage::Reconstruction => dict.class_dicts[j].tr_mul(&(&dict.class_dicts[j] * &xj)) * 2.0,
                Leakage::Coefficient => xj * 2.0,
            };
            gc.rows_mut(rj.start, rj.len()).add_assign(&leak);
        }
        for (k, &col) in cols.iter().enumerate() {
            grad.set_column(col, &gc.column(k));
        }
    }
    Ok(grad)
}

/// Gradient of `g` with respect to the stacked dictionary `[D_1..D_C, D_0]`.
pub fn fidelity_grad_d(terms: &Terms, y: &DMatrix<f64>, dict: &StructuredDictionary, codes: &CodeBlock) -> Result<DMatrix<f64>> {
    check_shapes(y, dict, codes)?;
    let full = dict.full();
    let layout = &codes.layout;
    let mut grad = (&full * &codes.x - y) * codes.x.transpose() * 2.0;
    for (c, cols) in codes.class_cols.iter().enumerate() {
        let yc = select_columns(y, cols);
        let xc = select_columns(&codes.x, cols);
        let own = own_residual(dict, codes, &yc, &xc, c);
        let r = &layout.class_rows[c];
        let xcc = xc.rows(r.start, r.len()).transpose();
        grad.columns_mut(r.start, r.len()).sub_assign(&(&own * xcc * 2.0));
        if let Some(r0) = &layout.shared_rows {
            let xc0 = xc.rows(r0.start, r0.len()).transpose();
            grad.columns_mut(r0.start, r0.len()).sub_assign(&(&own * xc0 * 2.0));
        }
        if terms.leakage == Leakage::Reconstruction {
            for (j, rj) in layout.class_rows.iter().enumerate() {
                if j == c {
                    continue;
                }
                let xj = xc.rows(rj.start, rj.len());
                let g = &dict.class_dicts[j] * xj * xj.transpose() * 2.0;
                grad.columns_mut(rj.start, rj.len()).add_assign(&g);
            }
        }
    }
    Ok(grad)
}

/// Fisher term on the class-part codes:
/// `sum_c (||X_c - M_c||^2 - ||M_c - M||^2) + ||X||^2`.
pub fn fisher(codes: &CodeBlock) -> f64 {
    let x = codes.class_part();
    let m = column_mean(&x);
    let mut total = x.norm_squared();
    for cols in &codes.class_cols {
        let xc = select_columns(&x, cols);
        let mc = column_mean(&xc);
        for k in 0..xc.ncols() {
            total += (xc.column(k) - &mc).norm_squared();
        }
        total -= cols.len() as f64 * (&mc - &m).norm_squared();
    }
    total
}

/// Gradient of [`fisher`] with respect to the class-part codes (`K_D x N`).
pub fn fisher_grad(codes: &CodeBlock) -> DMatrix<f64> {
    let x = codes.class_part();
    let m = column_mean(&x);
    let mut grad = DMatrix::zeros(x.nrows(), x.ncols());
    for cols in &codes.class_cols {
        let mc = column_mean(&select_columns(&x, cols));
        for &col in cols {
            let g = (x.column(col) - &mc) * 4.0 + &m * 2.0;
            grad.set_column(col, &g);
        }
    }
    grad
}

/// LRSDL discrimination term: [`fisher`] plus `||X^0 - M^0||^2`.
pub fn lrsdl_discrimination(codes: &CodeBlock) -> f64 {
    let mut total = fisher(codes);
    if let Some(x0) = codes.shared_part() {
        let m0 = column_mean(&x0);
        for k in 0..x0.ncols() {
            total += (x0.column(k) - &m0).norm_squared();
        }
    }
    total
}

/// Gradient of [`lrsdl_discrimination`] with respect to the full stacked codes.
pub fn lrsdl_discrimination_grad(codes: &CodeBlock) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(codes.x.nrows(), codes.x.ncols());
    let kd = codes.layout.class_part();
    grad.rows_mut(0, kd).copy_from(&fisher_grad(codes));
    if let (Some(x0), Some(r0)) = (codes.shared_part(), &codes.layout.shared_rows) {
        let m0 = column_mean(&x0);
        let mut g0 = x0;
        for mut col in g0.column_iter_mut() {
            col -= &m0;
            col *= 2.0;
        }
        grad.rows_mut(r0.start, r0.len()).copy_from(&g0);
    }
    grad
}

fn blocks(dict: &StructuredDictionary) -> Vec<&DMatrix<f64>> {
    let mut v: Vec<&DMatrix<f64>> = vec![];
    if let Some(d0) = &dict.shared {
        v.push(d0);
    }
    v.extend(dict.class_dicts.iter());
    v
}

/// Incoherence `sum_{c=0..C} sum_{i != c} ||D_i^T D_c||^2` over all ordered pairs of blocks.
pub fn incoherence(dict: &StructuredDictionary) -> f64 {
    let b = blocks(dict);
    let mut total = 0.0;
    for (c, dc) in b.iter().enumerate() {
        for (i, di) in b.iter().enumerate() {
            if i != c {
                total += di.tr_mul(dc).norm_squared();
            }
        }
    }
    total
}

/// Gradient of [`incoherence`] in the stacked layout `[D_1..D_C, D_0]`.
pub fn incoherence_grad(dict: &StructuredDictionary) -> DMatrix<f64> {
    let layout = dict.layout();
    let mut grad = DMatrix::zeros(dict.dim(), layout.total());
    let mut ranges: Vec<(&DMatrix<f64>, std::ops::Range<usize>)> = dict
        .class_dicts
        .iter()
        .zip(layout.class_rows.iter().cloned())
        .collect();
    if let (Some(d0), Some(r0)) = (&dict.shared, layout.shared_rows.clone()) {
        ranges.push((d0, r0));
    }
    for (c, (dc, rc)) in ranges.iter().enumerate() {
        let mut g = DMatrix::zeros(dict.dim(), rc.len());
        for (i, (di, _)) in ranges.iter().enumerate() {
            if i != c {
                g += *di * di.tr_mul(dc) * 4.0;
            }
        }
        grad.columns_mut(rc.start, rc.len()).copy_from(&g);
    }
    grad
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().sum()
}

/// Full objective of `algorithm` at `(D, X)`.
pub fn objective(
    algorithm: Algorithm,
    y: &DMatrix<f64>,
    dict: &StructuredDictionary,
    codes: &CodeBlock,
    lambda1: f64,
    lambda2: f64,
    eta: f64,
) -> Result<f64> {
    let terms = Terms::of(algorithm);
    let mut f = 0.5 * fidelity(&terms, y, dict, codes)? + lambda1 * codes.x.lp_norm(1);
    if terms.fisher {
        f += 0.5 * lambda2 * if terms.shared_scatter { lrsdl_discrimination(codes) } else { fisher(codes) };
    }
    if terms.incoherence {
        f += 0.5 * lambda2 * incoherence(dict);
    }
    if terms.nuclear {
        if let Some(d0) = &dict.shared {
            f += eta * nuclear_norm(d0);
        }
    }
    Ok(f)
}

pub fn fddl_objective(y: &DMatrix<f64>, dict: &StructuredDictionary, codes: &CodeBlock, lambda1: f64, lambda2: f64) -> Result<f64> {
    if dict.shared.is_some() {
        return Err(Error::InvalidInput("FDDL has no shared dictionary".into()));
    }
    objective(Algorithm::Fddl, y, dict, codes, lambda1, lambda2, 0.0)
}

pub fn copar_objective(y: &DMatrix<f64>, dict: &StructuredDictionary, codes: &CodeBlock, lambda1: f64, lambda2: f64) -> Result<f64> {
    if dict.shared.is_none() {
        return Err(Error::InvalidInput("COPAR needs a shared dictionary".into()));
    }
    objective(Algorithm::Copar, y, dict, codes, lambda1, lambda2, 0.0)
}

pub fn lrsdl_objective(
    y: &DMatrix<f64>,
    dict: &StructuredDictionary,
    codes: &CodeBlock,
    lambda1: f64,
    lambda2: f64,
    eta: f64,
) -> Result<f64> {
    if dict.shared.is_none() {
        return Err(Error::InvalidInput("LRSDL needs a shared dictionary".into()));
    }
    objective(Algorithm::Lrsdl, y, dict, codes, lambda1, lambda2, eta)
}
