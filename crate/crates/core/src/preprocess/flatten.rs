//! RPE estimation, baseline fitting, column-shift flattening and cropping.

use nalgebra::{DMatrix, DVector};

use super::GrayImage;
use crate::error::{Error, Result};

pub const CROP_ROWS: usize = 65;
pub const CROP_COLS: usize = 380;
pub const CROP_ABOVE: usize = 60;
pub const CROP_BELOW: usize = 4;

/// Per-column RPE row estimate. Rows are kept as reals so that synthetic
/// curves can be expressed exactly; `estimate_rpe` only produces integers.
#[derive(Debug, Clone, PartialEq)]
pub struct RpeCurve {
    pub row_at: Vec<f64>,
    pub valid: Vec<bool>,
}

impl RpeCurve {
    pub fn new(row_at: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if row_at.len() != valid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows vs {} validity flags",
                row_at.len(),
                valid.len()
            )));
        }
        Ok(Self { row_at, valid })
    }

    pub fn all_valid(row_at: Vec<f64>) -> Self {
        let valid = vec![true; row_at.len()];
        Self { row_at, valid }
    }

    pub fn len(&self) -> usize {
        self.row_at.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_at.is_empty()
    }

    pub fn valid_points(&self) -> Vec<(f64, f64)> {
        self.row_at
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter(|(_, (_, &ok))| ok)
            .map(|(j, (&r, _))| (j as f64, r))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    ConvexHull,
    Fraction,
}

/// Polynomial `row = coeffs[0] + coeffs[1] * col + ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub degree: usize,
    pub coeffs: Vec<f64>,
    pub method: BaselineMethod,
}

impl Baseline {
    pub fn constant(row: f64, method: BaselineMethod) -> Self {
        Self { degree: 0, coeffs: vec![row], method }
    }

    pub fn eval(&self, col: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * col + c)
    }
}

/// Top-two maxima per column, keep the deeper one, then median-filter across columns.
pub fn estimate_rpe(img: &GrayImage, median_window: usize) -> Result<RpeCurve> {
    if img.rows() < 3 {
        return Err(Error::TooSmall(format!("RPE estimation needs >= 3 rows, got {}", img.rows())));
    }
    let mut raw = Vec::with_capacity(img.cols());
    let mut valid = Vec::with_capacity(img.cols());
    for c in 0..img.cols() {
        let (first, second) = top_two(img, c);
        let constant = img.column(c).all(|v| v == img.get(0, c));
        raw.push(first.max(second));
        valid.push(!constant);
    }
    let filtered = median_filter(&raw, &valid, median_window.max(1));
    Ok(RpeCurve {
        row_at: filtered.into_iter().map(|r| r as f64).collect(),
        valid,
    })
}

/// Rows of the two largest intensities in a column; ties favour the smaller row.
fn top_two(img: &GrayImage, col: usize) -> (usize, usize) {
    let mut best: Option<(f64, usize)> = None;
    let mut second: Option<(f64, usize)> = None;
    for r in 0..img.rows() {
        let v = img.get(r, col);
        match best {
            None => best = Some((v, r)),
            Some((bv, _)) if v > bv => {
                second = best;
                best = Some((v, r));
            }
            _ => match second {
                None => second = Some((v, r)),
                Some((sv, _)) if v > sv => second = Some((v, r)),
                _ => {}
            },
        }
    }
    (best.map_or(0, |b| b.1), second.map_or(0, |s| s.1))
}

/// Centered running median over valid columns; the window is truncated at the
/// image edges and the lower median is taken for even counts.
fn median_filter(values: &[usize], valid: &[bool], window: usize) -> Vec<usize> {
    let half = window / 2;
    let n = values.len();
    let mut buf = Vec::with_capacity(window);
    (0..n)
        .map(|j| {
            if !valid[j] {
                return 0;
            }
            buf.clear();
            let lo = j.saturating_sub(half);
            let hi = (j + half).min(n - 1);
            buf.extend((lo..=hi).filter(|&k| valid[k]).map(|k| values[k]));
            buf.sort_unstable();
            buf[(buf.len() - 1) / 2]
        })
        .collect()
}

/// Indices of valid columns retained by the fraction rule: rows within
/// `fraction * (max - min)` of the deepest row.
pub fn fraction_support(curve: &RpeCurve, fraction: f64) -> Vec<usize> {
    let pts: Vec<(usize, f64)> = (0..curve.len())
        .filter(|&j| curve.valid[j])
        .map(|j| (j, curve.row_at[j]))
        .collect();
    if pts.is_empty() {
        return Vec::new();
    }
    let max = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let cut = max - fraction * (max - min);
    pts.into_iter().filter(|p| p.1 >= cut).map(|p| p.0).collect()
}

/// Points on the deep (large-row) border of the convex hull, collinear points included.
pub fn hull_lower_border(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut chain: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        while chain.len() >= 2 {
            let a = chain[chain.len() - 2];
            let b = chain[chain.len() - 1];
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            // with rows growing downward, the deep border turns clockwise in (col,row)
            if cross > 0.0 {
                chain.pop();
            } else {
                break;
            }
        }
        chain.push(p);
    }
    chain
}

pub fn fit_baseline(curve: &RpeCurve, method: BaselineMethod, degree: usize, fraction: f64) -> Result<Baseline> {
    if !(1..=4).contains(&degree) {
        return Err(Error::InvalidInput(format!("polynomial degree must be in 1..=4, got {degree}")));
    }
    let points: Vec<(f64, f64)> = match method {
        BaselineMethod::ConvexHull => hull_lower_border(&curve.valid_points()),
        BaselineMethod::Fraction => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::InvalidInput(format!("fraction must be in (0,1], got {fraction}")));
            }
            fraction_support(curve, fraction)
                .into_iter()
                .map(|j| (j as f64, curve.row_at[j]))
                .collect()
        }
    };
    if points.len() < degree + 1 {
        return Err(Error::InsufficientSupport {
            needed: degree + 1,
            available: points.len(),
        });
    }
    let coeffs = polyfit(&points, degree)?;
    Ok(Baseline { degree, coeffs, method })
}

/// Least squares on a centered/scaled abscissa, expanded back to monomials in `col`.
fn polyfit(points: &[(f64, f64)], degree: usize) -> Result<Vec<f64>> {
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let center = 0.5 * (lo + hi);
    let scale = (0.5 * (hi - lo)).max(1.0);
    let m = points.len();
    let a = DMatrix::from_fn(m, degree + 1, |i, k| ((points[i].0 - center) / scale).powi(k as i32));
    let b = DVector::from_iterator(m, points.iter().map(|p| p.1));
    let svd = a.svd(true, true);
    let t = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::InvalidInput(format!("polynomial fit failed: {e}")))?;
    // p(col) = sum_k t_k ((col - center)/scale)^k
    let mut coeffs = vec![0.0; degree + 1];
    for k in 0..=degree {
        let tk = t[k] / scale.powi(k as i32);
        for i in 0..=k {
            coeffs[i] += tk * binomial(k, i) * (-center).powi((k - i) as i32);
        }
    }
    Ok(coeffs)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Per-column shift of `round(target_row - baseline(col))`; positive moves down.
pub fn column_shifts(cols: usize, baseline: &Baseline, target_row: usize) -> Vec<i64> {
    (0..cols)
        .map(|j| (target_row as f64 - baseline.eval(j as f64)).round() as i64)
        .collect()
}

pub fn flatten(img: &GrayImage, baseline: &Baseline, target_row: usize) -> Result<GrayImage> {
    if target_row >= img.rows() {
        return Err(Error::OutOfBounds(format!(
            "target row {target_row} outside image with {} rows",
            img.rows()
        )));
    }
    let shifts = column_shifts(img.cols(), baseline, target_row);
    Ok(shift_columns(img, &shifts))
}

pub fn shift_columns(img: &GrayImage, shifts: &[i64]) -> GrayImage {
    let rows = img.rows() as i64;
    let mut out = GrayImage::filled(img.rows(), img.cols(), 0.0).expect("same shape as input");
    for (c, &s) in shifts.iter().enumerate() {
        for r in 0..rows {
            let src = r - s;
            if (0..rows).contains(&src) {
                out.set(r as usize, c, img.get(src as usize, c));
            }
        }
    }
    out
}

/// Fixed 65x380 window: 60 rows above the flattened RPE row, 4 below, columns center-cropped.
pub fn crop(img: &GrayImage, flat_row: usize) -> Result<GrayImage> {
    if flat_row < CROP_ABOVE {
        return Err(Error::OutOfBounds(format!(
            "rows: need {CROP_ABOVE} rows above row {flat_row}"
        )));
    }
    if flat_row + CROP_BELOW >= img.rows() {
        return Err(Error::OutOfBounds(format!(
            "rows: need {CROP_BELOW} rows below row {flat_row}, image has {} rows",
            img.rows()
        )));
    }
    if img.cols() < CROP_COLS {
        return Err(Error::OutOfBounds(format!(
            "cols: need at least {CROP_COLS} columns, image has {}",
            img.cols()
        )));
    }
    let col0 = (img.cols() - CROP_COLS) / 2;
    img.sub_image(flat_row - CROP_ABOVE, col0, CROP_ROWS, CROP_COLS)
}
