use super::FeatureVector;
use crate::error::{Error, Result};
use crate::preprocess::GrayImage;

/// Blocks whose histogram norm falls below this are emitted as zeros.
pub const BLOCK_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HogSpec {
    /// Cell size in pixels, (rows, cols).
    pub cell: (usize, usize),
    /// Block size in cells.
    pub block: (usize, usize),
    /// Block stride in cells.
    pub block_stride: (usize, usize),
    pub bins: usize,
}

impl Default for HogSpec {
    fn default() -> Self {
        Self {
            cell: (4, 4),
            block: (2, 2),
            block_stride: (1, 1),
            bins: 9,
        }
    }
}

impl HogSpec {
    pub fn with_bins(bins: usize) -> Self {
        Self { bins, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.cell.0 > 0
            && self.cell.1 > 0
            && self.block_stride.0 > 0
            && self.block_stride.1 > 0
            && self.block.0 >= self.block_stride.0
            && self.block.1 >= self.block_stride.1
            && self.bins >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid HOG parameters {self:?}")))
        }
    }

    fn cells(&self, rows: usize, cols: usize) -> (usize, usize) {
        (rows / self.cell.0, cols / self.cell.1)
    }

    fn blocks(&self, rows: usize, cols: usize) -> Option<(usize, usize)> {
        let (cr, cc) = self.cells(rows, cols);
        if cr < self.block.0 || cc < self.block.1 {
            return None;
        }
        Some((
            (cr - self.block.0) / self.block_stride.0 + 1,
            (cc - self.block.1) / self.block_stride.1 + 1,
        ))
    }
}

pub fn hog_dim(rows: usize, cols: usize, spec: &HogSpec) -> Result<usize> {
    spec.validate()?;
    let (br, bc) = spec.blocks(rows, cols).ok_or_else(|| {
        Error::TooSmall(format!("{rows}x{cols} image holds no complete HOG block"))
    })?;
    Ok(br * bc * spec.block.0 * spec.block.1 * spec.bins)
}

/// Centered-difference gradients with replicated borders: `(magnitude, unsigned angle in degrees)`.
pub(crate) fn gradient_at(img: &GrayImage, r: usize, c: usize) -> (f64, f64) {
    let (rows, cols) = (img.rows(), img.cols());
    let gx = img.get(r, (c + 1).min(cols - 1)) - img.get(r, c.saturating_sub(1));
    let gy = img.get((r + 1).min(rows - 1), c) - img.get(r.saturating_sub(1), c);
    let mag = gx.hypot(gy);
    let mut theta = gy.atan2(gx).to_degrees();
    if theta < 0.0 {
        theta += 180.0;
    }
    if theta >= 180.0 {
        theta -= 180.0;
    }
    (mag, theta)
}

/// Per-cell orientation histograms, row-major over cells. Bin `b` is centred
/// on `b * 180 / bins` degrees and votes are split linearly between the two
/// nearest centres (wrapping at 180).
pub fn cell_histograms(img: &GrayImage, spec: &HogSpec) -> Vec<Vec<f64>> {
    let (cr, cc) = spec.cells(img.rows(), img.cols());
    let width = 180.0 / spec.bins as f64;
    let mut hists = vec![vec![0.0; spec.bins]; cr * cc];
    for r in 0..cr * spec.cell.0 {
        for c in 0..cc * spec.cell.1 {
            let (mag, theta) = gradient_at(img, r, c);
            if mag == 0.0 {
                continue;
            }
            let pos = theta / width;
            let lower = pos.floor();
            let frac = pos - lower;
            let b0 = (lower as usize) % spec.bins;
            let b1 = (b0 + 1) % spec.bins;
            let h = &mut hists[(r / spec.cell.0) * cc + c / spec.cell.1];
            h[b0] += (1.0 - frac) * mag;
            if frac > 0.0 {
                h[b1] += frac * mag;
            }
        }
    }
    hists
}

/// Block-normalized HOG descriptor, blocks concatenated row-major.
pub fn hog(img: &GrayImage, spec: &HogSpec) -> Result<FeatureVector> {
    let dim = hog_dim(img.rows(), img.cols(), spec)?;
    let (_, cc) = spec.cells(img.rows(), img.cols());
    let (br, bc) = spec.blocks(img.rows(), img.cols()).expect("checked by hog_dim");
    let hists = cell_histograms(img, spec);
    let mut values = Vec::with_capacity(dim);
    let mut block = Vec::with_capacity(spec.block.0 * spec.block.1 * spec.bins);
    for i in 0..br {
        for j in 0..bc {
            block.clear();
            for u in 0..spec.block.0 {
                for v in 0..spec.block.1 {
                    let cell = (i * spec.block_stride.0 + u) * cc + j * spec.block_stride.1 + v;
                    block.extend_from_slice(&hists[cell]);
                }
            }
            let norm = block.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < BLOCK_EPS {
                values.extend(std::iter::repeat_n(0.0, block.len()));
            } else {
                values.extend(block.iter().map(|x| x / norm));
            }
        }
    }
    debug_assert_eq!(values.len(), dim);
    Ok(FeatureVector { values })
}
