//! Multi-scale HOG descriptors over a Gaussian image pyramid.

mod hog;
mod pyramid;

pub use hog::{hog, hog_dim, HogSpec};
pub use pyramid::{gaussian_pyramid, reduce, PyramidSpec};

use crate::error::Result;
use crate::preprocess::GrayImage;

/// A finite descriptor vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// HOG of every pyramid level, concatenated in level order.
pub fn extract_features(img: &GrayImage, pspec: &PyramidSpec, hspec: &HogSpec) -> Result<FeatureVector> {
    let levels = gaussian_pyramid(img, pspec)?;
    let mut values = Vec::new();
    for level in &levels {
        values.extend(hog(level, hspec)?.values);
    }
    Ok(FeatureVector { values })
}

/// Descriptor length `extract_features` produces for a `rows x cols` input.
pub fn feature_dim(rows: usize, cols: usize, pspec: &PyramidSpec, hspec: &HogSpec) -> Result<usize> {
    let (mut r, mut c) = (rows, cols);
    let mut total = 0;
    for _ in 0..pspec.levels {
        total += hog_dim(r, c, hspec)?;
        r = r.div_ceil(2);
        c = c.div_ceil(2);
    }
    Ok(total)
}
