use crate::error::{Error, Result};
use crate::preprocess::GrayImage;

pub const MIN_LEVEL_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PyramidSpec {
    pub levels: usize,
    pub a: f64,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self { levels: 2, a: 0.375 }
    }
}

impl PyramidSpec {
    /// Five-tap generating kernel `[1/4 - a/2, 1/4, a, 1/4, 1/4 - a/2]`.
    pub fn kernel(&self) -> [f64; 5] {
        let e = 0.25 - self.a / 2.0;
        [e, 0.25, self.a, 0.25, e]
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidInput("pyramid needs at least one level".into()));
        }
        if !(0.0..=0.5).contains(&self.a) {
            return Err(Error::InvalidInput(format!(
                "kernel parameter a={} gives negative taps",
                self.a
            )));
        }
        Ok(())
    }
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

/// Smooth with the separable kernel, then keep even rows and columns.
/// Taps are applied to differences from the center sample, so flat regions are reproduced exactly.
pub fn reduce(img: &GrayImage, kernel: &[f64; 5]) -> Result<GrayImage> {
    let (rows, cols) = (img.rows(), img.cols());
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let center = img.get(r, c);
            tmp[r * cols + c] = center
                + kernel
                    .iter()
                    .enumerate()
                    .map(|(t, w)| w * (img.get(r, reflect(c as isize + t as isize - 2, cols)) - center))
                    .sum::<f64>();
        }
    }
    let out_rows = rows.div_ceil(2);
    let out_cols = cols.div_ceil(2);
    GrayImage::from_fn(out_rows, out_cols, |r, c| {
        let (sr, sc) = (2 * r, 2 * c);
        let center = tmp[sr * cols + sc];
        center
            + kernel
                .iter()
                .enumerate()
                .map(|(t, w)| w * (tmp[reflect(sr as isize + t as isize - 2, rows) * cols + sc] - center))
                .sum::<f64>()
    })
}

/// Level 0 is the input; each further level is `reduce` of the previous one.
pub fn gaussian_pyramid(img: &GrayImage, spec: &PyramidSpec) -> Result<Vec<GrayImage>> {
    spec.validate()?;
    let kernel = spec.kernel();
    let (mut r, mut c) = (img.rows(), img.cols());
    for level in 0..spec.levels {
        if r < MIN_LEVEL_SIZE || c < MIN_LEVEL_SIZE {
            return Err(Error::TooSmall(format!(
                "pyramid level {level} would be {r}x{c}, below {MIN_LEVEL_SIZE}x{MIN_LEVEL_SIZE}"
            )));
        }
        r = r.div_ceil(2);
        c = c.div_ceil(2);
    }
    let mut levels = Vec::with_capacity(spec.levels);
    levels.push(img.clone());
    for _ in 1..spec.levels {
        let next = reduce(levels.last().unwrap(), &kernel)?;
        levels.push(next);
    }
    Ok(levels)
}
