//! Image decoding and patch extraction for the visual pathway.

use std::path::Path;

use image::imageops::FilterType;

use crate::error::{Error, Result};
use crate::tensor::Mat;

use super::ModelConfig;

/// Flattened length of one patch: `patch_size^2 * 3` channels.
pub fn patch_dim(cfg: &ModelConfig) -> usize {
    (cfg.patch_size * cfg.patch_size * 3) as usize
}

/// Decode an RGB image, resize it to the configured square resolution, and
/// cut it into a row-major grid of flattened patches. Pixel values are
/// centered to `[-0.5, 0.5]`.
pub fn image_to_patches(path: &Path, cfg: &ModelConfig) -> Result<Mat> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match img.color() {
        image::ColorType::Rgb8 | image::ColorType::Rgb16 | image::ColorType::Rgb32F => {}
        other => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("expected a 3-channel RGB image, got {other:?}"),
            })
        }
    }
    let resized = image::imageops::resize(
        &img.to_rgb8(),
        cfg.image_size,
        cfg.image_size,
        FilterType::Triangle,
    );
    Ok(patches_from_rgb(&resized, cfg))
}

/// Patchify an already-decoded RGB image of the configured resolution.
pub fn patches_from_rgb(img: &image::RgbImage, cfg: &ModelConfig) -> Mat {
    assert_eq!(img.width(), cfg.image_size);
    assert_eq!(img.height(), cfg.image_size);
    let per_side = (cfg.image_size / cfg.patch_size) as usize;
    let p = cfg.patch_size as usize;
    let mut out = Mat::zeros((per_side * per_side, patch_dim(cfg)));
    for py in 0..per_side {
        for px in 0..per_side {
            let row = py * per_side + px;
            let mut col = 0;
            for dy in 0..p {
                for dx in 0..p {
                    let pixel = img.get_pixel((px * p + dx) as u32, (py * p + dy) as u32);
                    for ch in 0..3 {
                        out[[row, col]] = pixel[ch] as f64 / 255.0 - 0.5;
                        col += 1;
                    }
                }
            }
        }
    }
    out
}
