//! Evaluation protocol: Y-channel PSNR, NIQE, and the perceptual index.

mod niqe;

pub use niqe::{
    aggd_fit, fit_pristine_model, mscn, niqe_features, niqe_score, AggdFit, NiqeModel,
    NIQE_FEATURE_DIM,
};

use crate::data::ImageRGB;
use crate::error::{Error, Result};

/// A single luminance (or coefficient) plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), h * w);
        Self { h, w, data }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }
}

/// ITU-R BT.601 studio-swing luminance of an RGB image in [0, 1]:
/// `Y = 16/255 + (65.481 R + 128.553 G + 24.966 B) / 255`.
pub fn rgb_to_y(img: &ImageRGB) -> Plane {
    let (h, w) = (img.height(), img.width());
    let mut data = Vec::with_capacity(h * w);
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    for i in 0..h * w {
        data.push(16.0 / 255.0 + (65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i]) / 255.0);
    }
    Plane::new(h, w, data)
}

/// Y-channel PSNR in dB with `crop_border` pixels removed on every side.
/// `MAX = 1` in normalized units (equivalent to 255 in 8-bit convention).
/// Identical images report `f64::INFINITY`.
pub fn psnr_y(sr: &ImageRGB, hr: &ImageRGB, crop_border: usize) -> Result<f64> {
    if sr.height() != hr.height() || sr.width() != hr.width() {
        return Err(Error::Data(format!(
            "PSNR dimension mismatch: {}x{} vs {}x{}",
            sr.height(),
            sr.width(),
            hr.height(),
            hr.width()
        )));
    }
    if sr.height() <= 2 * crop_border || sr.width() <= 2 * crop_border {
        return Err(Error::Data(format!(
            "crop_border {} leaves no pixels in a {}x{} image",
            crop_border,
            sr.height(),
            sr.width()
        )));
    }
    let ys = rgb_to_y(sr);
    let yh = rgb_to_y(hr);
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for y in crop_border..sr.height() - crop_border {
        for x in crop_border..sr.width() - crop_border {
            let d = ys.get(y, x) - yh.get(y, x);
            sum_sq += d * d;
            count += 1;
        }
    }
    let mse = sum_sq / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// PIRM perceptual index: `((10 - ma) + niqe) / 2`. Lower is better.
pub fn perceptual_index(ma: f64, niqe: f64) -> f64 {
    ((10.0 - ma) + niqe) / 2.0
}

/// Per-image evaluation record. `ma` is externally supplied;
/// `perceptual_index` is present iff `ma` is.
#[derive(Debug, Clone)]
pub struct QualityReport {
    pub name: String,
    pub psnr_y: f64,
    pub niqe: f64,
    pub ma: Option<f64>,
    pub perceptual_index: Option<f64>,
}

impl QualityReport {
    pub fn new(name: impl Into<String>, psnr_y: f64, niqe: f64, ma: Option<f64>) -> Self {
        Self {
            name: name.into(),
            psnr_y,
            niqe,
            ma,
            perceptual_index: ma.map(|m| perceptual_index(m, niqe)),
        }
    }
}

pub const REPORT_HEADER: &str = "filename,psnr_y,niqe,ma,perceptual_index";

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}

/// Render the report CSV: header, one row per image, and a final mean row.
/// Values print with 6 decimals; infinite PSNR prints as `inf`.
pub fn render_report(rows: &[QualityReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{}\n",
            r.name,
            r.psnr_y,
            r.niqe,
            fmt_cell(r.ma),
            fmt_cell(r.perceptual_index),
        ));
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean_psnr = rows.iter().map(|r| r.psnr_y).sum::<f64>() / n;
        let mean_niqe = rows.iter().map(|r| r.niqe).sum::<f64>() / n;
        let mean_ma = rows
            .iter()
            .map(|r| r.ma)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        let mean_pi = rows
            .iter()
            .map(|r| r.perceptual_index)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        out.push_str(&format!(
            "mean,{:.6},{:.6},{},{}\n",
            mean_psnr,
            mean_niqe,
            fmt_cell(mean_ma),
            fmt_cell(mean_pi),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, v: f64) -> ImageRGB {
        ImageRGB::from_fn(h, w, |_, _, _| v)
    }

    #[test]
    fn luminance_anchors() {
        let black = rgb_to_y(&gray(2, 2, 0.0));
        assert!((black.get(0, 0) - 16.0 / 255.0).abs() < 1e-12);
        let white = rgb_to_y(&gray(2, 2, 1.0));
        assert!((white.get(0, 0) - 235.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn luminance_is_affine_in_gray_level() {
        let y0 = rgb_to_y(&gray(1, 1, 0.0)).get(0, 0);
        let y1 = rgb_to_y(&gray(1, 1, 1.0)).get(0, 0);
        for v in [0.1, 0.35, 0.8] {
            let y = rgb_to_y(&gray(1, 1, v)).get(0, 0);
            assert!((y - (y0 + v * (y1 - y0))).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let img = gray(8, 8, 0.5);
        assert_eq!(psnr_y(&img, &img, 0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_uniform_one_lsb_difference() {
        // Y is affine in gray level with slope 219/255, so a gray step of
        // 1/219 produces a Y difference of exactly 1/255.
        let a = gray(16, 16, 0.4);
        let b = gray(16, 16, 0.4 + 1.0 / 219.0);
        let db = psnr_y(&a, &b, 0).unwrap();
        let expected = 20.0 * 255f64.log10();
        assert!((db - expected).abs() < 1e-3, "{db} vs {expected}");
    }

    #[test]
    fn psnr_matches_naive_oracle() {
        let mut rng = crate::rng::RngState::new(31);
        for _ in 0..5 {
            let a = ImageRGB::from_fn(12, 10, |_, _, _| rng.uniform());
            let b = ImageRGB::from_fn(12, 10, |_, _, _| rng.uniform());
            let crop = 2;
            // independent two-pass oracle over the pixel grid
            let (ya, yb) = (rgb_to_y(&a), rgb_to_y(&b));
            let mut diffs = Vec::new();
            for y in crop..12 - crop {
                for x in crop..10 - crop {
                    diffs.push(ya.get(y, x) - yb.get(y, x));
                }
            }
            let mse: f64 = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
            let expected = 10.0 * (1.0 / mse).log10();
            let got = psnr_y(&a, &b, crop).unwrap();
            assert!((got - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn psnr_symmetry_and_shift_invariance() {
        let mut rng = crate::rng::RngState::new(32);
        let a = ImageRGB::from_fn(9, 9, |_, _, _| 0.2 + 0.4 * rng.uniform());
        let b = ImageRGB::from_fn(9, 9, |_, _, _| 0.2 + 0.4 * rng.uniform());
        let ab = psnr_y(&a, &b, 1).unwrap();
        let ba = psnr_y(&b, &a, 1).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let shift = 0.1;
        let a2 = ImageRGB::from_fn(9, 9, |c, y, x| a.get(c, y, x) + shift);
        let b2 = ImageRGB::from_fn(9, 9, |c, y, x| b.get(c, y, x) + shift);
        let shifted = psnr_y(&a2, &b2, 1).unwrap();
        assert!((ab - shifted).abs() < 1e-9);
    }

    #[test]
    fn psnr_dimension_mismatch_errors() {
        assert!(psnr_y(&gray(4, 4, 0.1), &gray(4, 5, 0.1), 0).is_err());
        assert!(psnr_y(&gray(4, 4, 0.1), &gray(4, 4, 0.1), 2).is_err());
    }

    #[test]
    fn perceptual_index_formula() {
        assert_eq!(perceptual_index(10.0, 4.0), 2.0);
        assert!((perceptual_index(7.5, 2.6) - 2.55).abs() < 1e-12);
    }

    #[test]
    fn perceptual_index_monotonicity() {
        let mas = [2.0, 4.0, 6.0, 8.0, 10.0];
        let niqes = [1.0, 3.0, 5.0, 7.0];
        for n in niqes {
            for pair in mas.windows(2) {
                assert!(perceptual_index(pair[1], n) < perceptual_index(pair[0], n));
            }
        }
        for m in mas {
            for pair in niqes.windows(2) {
                assert!(perceptual_index(m, pair[1]) > perceptual_index(m, pair[0]));
            }
        }
    }

    #[test]
    fn report_format() {
        let rows = vec![
            QualityReport::new("a.png", f64::INFINITY, 4.0, Some(10.0)),
            QualityReport::new("b.png", 30.0, 6.0, Some(8.0)),
        ];
        let csv = render_report(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), REPORT_HEADER);
        assert_eq!(lines.next().unwrap(), "a.png,inf,4.000000,10.000000,2.000000");
        assert_eq!(lines.next().unwrap(), "b.png,30.000000,6.000000,8.000000,4.000000");
        assert_eq!(lines.next().unwrap(), "mean,inf,5.000000,9.000000,3.000000");
        // without ma, those columns stay empty
        let csv2 = render_report(&[QualityReport::new("c.png", 20.0, 5.0, None)]);
        assert!(csv2.contains("c.png,20.000000,5.000000,,\n"));
    }
}
