use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::preprocess::GrayImage;

/// Reads a grayscale PNG or PGM; intensities keep their stored scale
/// (0..255 for 8-bit, 0..65535 for 16-bit files). Color images are
/// converted to luma.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(f64::from).collect(),
        other => other.to_luma16().into_raw().into_iter().map(f64::from).collect(),
    };
    GrayImage::new(h, w, pixels)
}

/// Writes a 16-bit PNG, mapping the image's range linearly onto 0..65535
/// (a constant image maps to 0).
pub fn save_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    let (lo, hi) = img.min_max();
    let span = hi - lo;
    let raw: Vec<u16> = img
        .pixels()
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 65535.0).round() as u16 } else { 0 })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(img.cols() as u32, img.rows() as u32, raw)
        .ok_or_else(|| Error::InvalidInput("image buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
