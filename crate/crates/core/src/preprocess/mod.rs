//! B-scan preprocessing: contrast enhancement, RPE-based flattening and cropping.

mod enhance;
mod flatten;
mod gray;

pub use enhance::{
    enhance_contrast, enhance_contrast_with, erfcx, fit_mixture, fit_mixture_with, normal_laplace_ln_pdf,
    target_means, EnhanceOptions, MixtureComponent, MixtureFit, MixtureModel, TARGET_STD,
};
pub use flatten::{
    column_shifts, crop, estimate_rpe, fit_baseline, flatten, fraction_support, hull_lower_border,
    shift_columns, Baseline, BaselineMethod, RpeCurve, CROP_ABOVE, CROP_BELOW, CROP_COLS, CROP_ROWS,
};
pub use gray::GrayImage;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub degree: usize,
    pub method: BaselineMethod,
    pub fraction: f64,
    pub median_window: usize,
    /// Mixture components for enhancement; `0` skips enhancement.
    pub denoise_components: usize,
    pub em_iters: usize,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            degree: 2,
            method: BaselineMethod::ConvexHull,
            fraction: 0.3,
            median_window: 15,
            denoise_components: 3,
            em_iters: 30,
            seed: 0,
        }
    }
}

/// Full chain for one B-scan: enhance, estimate the RPE, flatten onto a
/// horizontal line and cut the 65x380 window around it.
pub fn preprocess_bscan(img: &GrayImage, cfg: &PreprocessConfig) -> Result<GrayImage> {
    let enhanced = if cfg.denoise_components > 0 {
        enhance_contrast_with(
            img,
            &EnhanceOptions {
                n_components: cfg.denoise_components,
                em_iters: cfg.em_iters,
                seed: cfg.seed,
                ..EnhanceOptions::default()
            },
        )?
    } else {
        img.clone()
    };
    let curve = estimate_rpe(&enhanced, cfg.median_window)?;
    let baseline = fit_baseline(&curve, cfg.method, cfg.degree, cfg.fraction)?;
    let target = flat_target_row(&baseline, enhanced.rows(), enhanced.cols());
    let flat = flatten(&enhanced, &baseline, target)?;
    crop(&flat, target)
}

/// Mean baseline row, clamped so the crop window fits.
pub fn flat_target_row(baseline: &Baseline, rows: usize, cols: usize) -> usize {
    let mean = (0..cols).map(|j| baseline.eval(j as f64)).sum::<f64>() / cols as f64;
    let hi = rows.saturating_sub(CROP_BELOW + 1).max(CROP_ABOVE);
    (mean.round().max(0.0) as usize).clamp(CROP_ABOVE, hi)
}
