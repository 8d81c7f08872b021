//! PNG reading and writing.

use std::path::Path;

use image::{DynamicImage, ImageReader, RgbImage};

use super::ImageRGB;
use crate::error::{Error, Result};

/// Load an 8-bit or 16-bit PNG, scaled to [0, 1].
pub fn load_image(path: &Path) -> Result<ImageRGB> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = ImageRGB::new(h, w);
    match img {
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => {
            let rgb = img.to_rgb16();
            for (y, row) in rgb.rows().enumerate() {
                for (x, px) in row.enumerate() {
                    for c in 0..3 {
                        out.set(c, y, x, px.0[c] as f64 / 65535.0);
                    }
                }
            }
        }
        _ => {
            let rgb = img.to_rgb8();
            for (y, row) in rgb.rows().enumerate() {
                for (x, px) in row.enumerate() {
                    for c in 0..3 {
                        out.set(c, y, x, px.0[c] as f64 / 255.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Save as 8-bit PNG: clamp to [0, 1], then quantize with round-half-up.
pub fn save_image(img: &ImageRGB, path: &Path) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let mut rgb = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = rgb.get_pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                let v = img.get(c, y, x).clamp(0.0, 1.0);
                px.0[c] = (v * 255.0).round() as u8;
            }
        }
    }
    rgb.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
