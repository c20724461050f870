//! Pseudo-colour previews of a cube.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{param_err, Error, Result};
use crate::hsi::HsiCube;
use crate::scalar::Scalar;

/// Bands shown as red, green and blue by default.
pub const DEFAULT_RENDER_BANDS: [usize; 3] = [57, 27, 17];

fn to_u8<T: Scalar>(v: T) -> u8 {
    let v = v.as_f64();
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

/// 8-bit RGB image whose channels are the given bands clipped to `[0, 1]`.
pub fn pseudo_color<T: Scalar>(cube: &HsiCube<T>, bands: [usize; 3]) -> Result<RgbImage> {
    if let Some(&b) = bands.iter().find(|&&b| b >= cube.bands()) {
        return Err(param_err!("render band {b} out of range for {} bands", cube.bands()));
    }
    let (rows, cols, _) = cube.dims();
    Ok(RgbImage::from_fn(cols as u32, rows as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        Rgb(bands.map(|b| to_u8(cube.get(r, c, b))))
    }))
}

pub fn save_png<T: Scalar>(cube: &HsiCube<T>, bands: [usize; 3], path: &Path) -> Result<()> {
    let img = pseudo_color(cube, bands)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(other.to_string()),
        })
}
