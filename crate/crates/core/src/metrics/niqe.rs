//! Natural Image Quality Evaluator.
//!
//! Pipeline: mean-subtracted contrast-normalized (MSCN) coefficients from a
//! 7x7 Gaussian window (std 7/6, C = 1/255 in [0,1] units), asymmetric
//! generalized Gaussian fits of the MSCN field and its four neighbor
//! products, pooled over the sharpest patches at two scales (18 + 18 = 36
//! features), scored as the Mahalanobis-type distance between the
//! multivariate Gaussian fits of a test image and a pristine corpus.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma;

use super::Plane;
use crate::bytes::{ByteReader, ByteWriter};
use crate::data::{resample_plane, ImageRGB};
use crate::error::{Error, Result};
use crate::metrics::rgb_to_y;

pub const NIQE_FEATURE_DIM: usize = 36;

const WINDOW_SIDE: usize = 7;
const WINDOW_STD: f64 = 7.0 / 6.0;
const MSCN_C: f64 = 1.0 / 255.0;
const SHARPNESS_FRACTION: f64 = 0.75;
const MIN_AGGD_SAMPLES: usize = 100;

/// Pristine natural-scene statistics: feature mean and covariance.
#[derive(Debug, Clone)]
pub struct NiqeModel {
    pub mean: Vec<f64>,
    /// Row-major 36x36 covariance.
    pub cov: Vec<f64>,
    pub patch_size: usize,
}

fn gaussian_window() -> &'static [f64; WINDOW_SIDE * WINDOW_SIDE] {
    static WINDOW: OnceLock<[f64; WINDOW_SIDE * WINDOW_SIDE]> = OnceLock::new();
    WINDOW.get_or_init(|| {
        let mut w = [0.0; WINDOW_SIDE * WINDOW_SIDE];
        let half = (WINDOW_SIDE / 2) as isize;
        let mut sum = 0.0;
        for (i, w) in w.iter_mut().enumerate() {
            let dy = (i / WINDOW_SIDE) as isize - half;
            let dx = (i % WINDOW_SIDE) as isize - half;
            let r2 = (dy * dy + dx * dx) as f64;
            *w = (-r2 / (2.0 * WINDOW_STD * WINDOW_STD)).exp();
            sum += *w;
        }
        for w in &mut w {
            *w /= sum;
        }
        w
    })
}

/// Gaussian filter with replicate edge handling.
fn gauss_filter(plane: &Plane) -> Plane {
    let window = gaussian_window();
    let half = (WINDOW_SIDE / 2) as isize;
    let (h, w) = (plane.h as isize, plane.w as isize);
    let mut out = vec![0.0; plane.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -half..=half {
                let sy = (y + dy).clamp(0, h - 1) as usize;
                for dx in -half..=half {
                    let sx = (x + dx).clamp(0, w - 1) as usize;
                    let wv = window[((dy + half) * WINDOW_SIDE as isize + (dx + half)) as usize];
                    acc += wv * plane.data[sy * plane.w + sx];
                }
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    Plane::new(plane.h, plane.w, out)
}

/// Mean-subtracted contrast-normalized coefficients plus the local sigma
/// field: `(I - mu) / (sigma + C)` with `mu`, `sigma` from the 7x7 window.
pub fn mscn(plane: &Plane) -> (Plane, Plane) {
    let mu = gauss_filter(plane);
    let sq = Plane::new(
        plane.h,
        plane.w,
        plane.data.iter().map(|v| v * v).collect(),
    );
    let musq = gauss_filter(&sq);
    let mut sigma = vec![0.0; plane.data.len()];
    let mut coeffs = vec![0.0; plane.data.len()];
    for i in 0..plane.data.len() {
        let var = (musq.data[i] - mu.data[i] * mu.data[i]).max(0.0);
        sigma[i] = var.sqrt();
        coeffs[i] = (plane.data[i] - mu.data[i]) / (sigma[i] + MSCN_C);
    }
    (
        Plane::new(plane.h, plane.w, coeffs),
        Plane::new(plane.h, plane.w, sigma),
    )
}

/// Asymmetric generalized Gaussian fit by moment matching.
#[derive(Debug, Clone, Copy)]
pub struct AggdFit {
    pub alpha: f64,
    pub beta_left: f64,
    pub beta_right: f64,
    /// Distribution mean implied by the fit.
    pub mean: f64,
}

/// `rho(alpha) = Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a))` sampled on the
/// standard fine grid over alpha in [0.2, 10].
fn rho_table() -> &'static Vec<(f64, f64)> {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(9801);
        let mut a = 0.2;
        while a <= 10.0 + 1e-9 {
            let rho = gamma(2.0 / a).powi(2) / (gamma(1.0 / a) * gamma(3.0 / a));
            t.push((a, rho));
            a += 0.001;
        }
        t
    })
}

/// Moment-matching AGGD estimate over the alpha grid.
pub fn aggd_fit(samples: &[f64]) -> Result<AggdFit> {
    if samples.len() < MIN_AGGD_SAMPLES {
        return Err(Error::Data(format!(
            "aggd_fit needs >= {MIN_AGGD_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let mut left_sq = 0.0;
    let mut left_n = 0usize;
    let mut right_sq = 0.0;
    let mut right_n = 0usize;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for &x in samples {
        if x < 0.0 {
            left_sq += x * x;
            left_n += 1;
        } else {
            right_sq += x * x;
            right_n += 1;
        }
        abs_sum += x.abs();
        sq_sum += x * x;
    }
    if sq_sum == 0.0 {
        return Err(Error::Data("aggd_fit: samples have zero variance".into()));
    }
    let sigma_l = if left_n > 0 {
        (left_sq / left_n as f64).sqrt()
    } else {
        0.0
    }
    .max(1e-12);
    let sigma_r = if right_n > 0 {
        (right_sq / right_n as f64).sqrt()
    } else {
        0.0
    }
    .max(1e-12);
    let n = samples.len() as f64;
    let gamma_hat = sigma_l / sigma_r;
    let r_hat = (abs_sum / n).powi(2) / (sq_sum / n);
    let r_norm = r_hat * (gamma_hat.powi(3) + 1.0) * (gamma_hat + 1.0)
        / (gamma_hat.powi(2) + 1.0).powi(2);

    let mut best = (f64::INFINITY, 2.0);
    for &(a, rho) in rho_table() {
        let d = (rho - r_norm) * (rho - r_norm);
        if d < best.0 {
            best = (d, a);
        }
    }
    let alpha = best.1;
    let conv = (gamma(1.0 / alpha) / gamma(3.0 / alpha)).sqrt();
    let beta_left = sigma_l * conv;
    let beta_right = sigma_r * conv;
    let mean = (beta_right - beta_left) * gamma(2.0 / alpha) / gamma(1.0 / alpha);
    Ok(AggdFit {
        alpha,
        beta_left,
        beta_right,
        mean,
    })
}

/// Neighbor products of an MSCN patch along one orientation.
fn orientation_products(patch: &Plane, dy: isize, dx: isize) -> Vec<f64> {
    let mut out = Vec::new();
    for y in 0..patch.h {
        let sy = y as isize + dy;
        if sy < 0 || sy >= patch.h as isize {
            continue;
        }
        for x in 0..patch.w {
            let sx = x as isize + dx;
            if sx < 0 || sx >= patch.w as isize {
                continue;
            }
            out.push(patch.get(y, x) * patch.get(sy as usize, sx as usize));
        }
    }
    out
}

/// 18 features of one MSCN patch: GGD-style (alpha, mean scale) of the MSCN
/// coefficients plus (alpha, mean, beta_l, beta_r) of the four neighbor
/// products (horizontal, vertical, both diagonals).
fn patch_features(patch: &Plane) -> Result<[f64; 18]> {
    let mut f = [0.0; 18];
    let base = aggd_fit(&patch.data)?;
    f[0] = base.alpha;
    f[1] = (base.beta_left + base.beta_right) / 2.0;
    let orientations: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
    for (k, (dy, dx)) in orientations.iter().enumerate() {
        let prod = orientation_products(patch, *dy, *dx);
        let fit = aggd_fit(&prod)?;
        let o = 2 + k * 4;
        f[o] = fit.alpha;
        f[o + 1] = fit.mean;
        f[o + 2] = fit.beta_left;
        f[o + 3] = fit.beta_right;
    }
    Ok(f)
}

fn sub_plane(p: &Plane, top: usize, left: usize, h: usize, w: usize) -> Plane {
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        let row = (top + y) * p.w + left;
        data.extend_from_slice(&p.data[row..row + w]);
    }
    Plane::new(h, w, data)
}

/// Per-patch 36-dim feature vectors of a luminance plane.
///
/// The plane is trimmed to whole patches; patches whose mean local sigma
/// exceeds 75% of the sharpest patch are kept (all patches when the image is
/// perfectly flat). Each keeps 18 features at native scale and 18 at half
/// scale.
pub fn niqe_features(y: &Plane, patch_size: usize) -> Result<Vec<Vec<f64>>> {
    if patch_size < 8 || patch_size % 2 != 0 {
        return Err(Error::Config(format!(
            "patch_size must be even and >= 8, got {patch_size}"
        )));
    }
    if y.h < 2 * patch_size || y.w < 2 * patch_size {
        return Err(Error::Data(format!(
            "image {}x{} smaller than 2x patch size {}",
            y.h, y.w, patch_size
        )));
    }
    let rows = (y.h / patch_size) * patch_size;
    let cols = (y.w / patch_size) * patch_size;
    let trimmed = sub_plane(y, 0, 0, rows, cols);

    let (coeffs1, sigma1) = mscn(&trimmed);
    let half = Plane::new(
        rows / 2,
        cols / 2,
        resample_plane(&trimmed.data, rows, cols, rows / 2, cols / 2, true),
    );
    let (coeffs2, _) = mscn(&half);

    let grid_y = rows / patch_size;
    let grid_x = cols / patch_size;
    let mut sharpness = Vec::with_capacity(grid_y * grid_x);
    for py in 0..grid_y {
        for px in 0..grid_x {
            let s = sub_plane(&sigma1, py * patch_size, px * patch_size, patch_size, patch_size);
            sharpness.push(s.data.iter().sum::<f64>() / s.data.len() as f64);
        }
    }
    let max_sharp = sharpness.iter().cloned().fold(0.0, f64::max);
    let threshold = SHARPNESS_FRACTION * max_sharp;

    let mut features = Vec::new();
    let hp = patch_size / 2;
    for py in 0..grid_y {
        for px in 0..grid_x {
            let idx = py * grid_x + px;
            if max_sharp > 0.0 && sharpness[idx] <= threshold {
                continue;
            }
            let native = sub_plane(
                &coeffs1,
                py * patch_size,
                px * patch_size,
                patch_size,
                patch_size,
            );
            let coarse = sub_plane(&coeffs2, py * hp, px * hp, hp, hp);
            let mut f = Vec::with_capacity(NIQE_FEATURE_DIM);
            f.extend_from_slice(&patch_features(&native)?);
            f.extend_from_slice(&patch_features(&coarse)?);
            features.push(f);
        }
    }
    if features.is_empty() {
        return Err(Error::Data("no patches selected for NIQE features".into()));
    }
    Ok(features)
}

fn mean_cov(features: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = features.len();
    let d = NIQE_FEATURE_DIM;
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    if n > 1 {
        for f in features {
            for i in 0..d {
                let di = f[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (f[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / (n - 1) as f64;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
    }
    (mean, cov)
}

/// Fit the pristine model: pooled patch features over a corpus.
pub fn fit_pristine_model(corpus: &[ImageRGB], patch_size: usize) -> Result<NiqeModel> {
    if corpus.len() < 2 {
        return Err(Error::Data(format!(
            "pristine corpus needs at least 2 images, got {}",
            corpus.len()
        )));
    }
    let mut pooled = Vec::new();
    for img in corpus {
        pooled.extend(niqe_features(&rgb_to_y(img), patch_size)?);
    }
    let (mean, cov) = mean_cov(&pooled);
    Ok(NiqeModel {
        mean,
        cov,
        patch_size,
    })
}

/// NIQE score of an image against a pristine model:
/// `sqrt((v1-v2)^T ((S1+S2)/2)^{-1} (v1-v2))`.
///
/// The pooled covariance is inverted through its symmetric
/// eigendecomposition with small eigenvalues dropped (a pseudo-inverse), so
/// rank-deficient covariances from small corpora stay well-behaved and the
/// quadratic form never goes negative.
pub fn niqe_score(img: &ImageRGB, model: &NiqeModel) -> Result<f64> {
    if model.mean.len() != NIQE_FEATURE_DIM || model.cov.len() != NIQE_FEATURE_DIM * NIQE_FEATURE_DIM
    {
        return Err(Error::Config("malformed NIQE model dimensions".into()));
    }
    let features = niqe_features(&rgb_to_y(img), model.patch_size)?;
    let (mean2, cov2) = mean_cov(&features);
    let d = NIQE_FEATURE_DIM;
    let diff = DVector::from_iterator(d, model.mean.iter().zip(&mean2).map(|(a, b)| a - b));
    let mut pooled = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            pooled[(i, j)] = (model.cov[i * d + j] + cov2[i * d + j]) / 2.0;
        }
    }
    let eig = pooled.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(*b));
    if max_ev <= 0.0 {
        // both covariances vanish (degenerate corpora); only the mean shift
        // is meaningful, report its norm
        return Ok(diff.norm());
    }
    let tol = max_ev * 1e-12;
    let mut q = 0.0;
    for k in 0..d {
        let lambda = eig.eigenvalues[k];
        if lambda > tol {
            let proj = eig.eigenvectors.column(k).dot(&diff);
            q += proj * proj / lambda;
        }
    }
    Ok(q.sqrt())
}

// --- model file -------------------------------------------------------------

const MAGIC: &[u8; 4] = b"NIQM";
const VERSION: u32 = 1;

impl NiqeModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.patch_size as u32);
        w.f64_slice(&self.mean);
        w.f64_slice(&self.cov);
        w.finish_with_checksum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::bytes::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::with_checksum(&bytes, path)?;
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("unsupported NIQE model version {version}"),
            });
        }
        let patch_size = r.u32()? as usize;
        let mean = r.f64_vec(NIQE_FEATURE_DIM)?;
        let cov = r.f64_vec(NIQE_FEATURE_DIM * NIQE_FEATURE_DIM)?;
        r.done()?;
        Ok(Self {
            mean,
            cov,
            patch_size,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn mscn_constant_plane_is_zero() {
        let plane = Plane::new(16, 16, vec![0.37; 256]);
        let (coeffs, sigma) = mscn(&plane);
        for v in &coeffs.data {
            assert!(v.abs() < 1e-12, "{v}");
        }
        for v in &sigma.data {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn mscn_matches_nested_loop_oracle() {
        let mut rng = RngState::new(21);
        let plane = Plane::new(10, 12, (0..120).map(|_| rng.uniform()).collect());
        let (coeffs, _) = mscn(&plane);
        // direct re-computation with scalar loops
        let window = gaussian_window();
        for y in 0..10usize {
            for x in 0..12usize {
                let mut mu = 0.0;
                let mut musq = 0.0;
                for dy in -3i32..=3 {
                    for dx in -3i32..=3 {
                        let sy = (y as i32 + dy).clamp(0, 9) as usize;
                        let sx = (x as i32 + dx).clamp(0, 11) as usize;
                        let wv = window[((dy + 3) * 7 + dx + 3) as usize];
                        mu += wv * plane.get(sy, sx);
                        musq += wv * plane.get(sy, sx) * plane.get(sy, sx);
                    }
                }
                let sigma = (musq - mu * mu).max(0.0).sqrt();
                let expected = (plane.get(y, x) - mu) / (sigma + 1.0 / 255.0);
                assert!((coeffs.get(y, x) - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mscn_mean_is_small_on_textured_image() {
        let mut rng = RngState::new(5);
        let plane = smooth_plane(&mut rng, 64, 64);
        let (coeffs, _) = mscn(&plane);
        let mean = coeffs.data.iter().sum::<f64>() / coeffs.data.len() as f64;
        assert!(mean.abs() < 0.05, "MSCN mean {mean}");
    }

    #[test]
    fn mscn_is_always_finite() {
        let mut rng = RngState::new(6);
        let plane = Plane::new(20, 20, (0..400).map(|_| rng.uniform()).collect());
        let (coeffs, _) = mscn(&plane);
        assert!(coeffs.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn aggd_recovers_gaussian_alpha() {
        let mut rng = RngState::new(42);
        let samples: Vec<f64> = (0..100_000).map(|_| rng.normal()).collect();
        let fit = aggd_fit(&samples).unwrap();
        assert!((fit.alpha - 2.0).abs() < 0.1, "alpha {}", fit.alpha);
        assert!(
            (fit.beta_left - fit.beta_right).abs() < 0.05,
            "{} vs {}",
            fit.beta_left,
            fit.beta_right
        );
    }

    #[test]
    fn aggd_recovers_laplacian_alpha() {
        let mut rng = RngState::new(43);
        // inverse-CDF sampling of a unit Laplacian
        let samples: Vec<f64> = (0..100_000)
            .map(|_| {
                let u = rng.uniform() - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            })
            .collect();
        let fit = aggd_fit(&samples).unwrap();
        assert!((fit.alpha - 1.0).abs() < 0.1, "alpha {}", fit.alpha);
    }

    #[test]
    fn aggd_sign_flip_swaps_scales() {
        let mut rng = RngState::new(44);
        // asymmetric: negatives drawn wider than positives
        let samples: Vec<f64> = (0..50_000)
            .map(|_| {
                let z = rng.normal();
                if z < 0.0 {
                    z * 2.0
                } else {
                    z
                }
            })
            .collect();
        let flipped: Vec<f64> = samples.iter().map(|v| -v).collect();
        let a = aggd_fit(&samples).unwrap();
        let b = aggd_fit(&flipped).unwrap();
        assert!((a.alpha - b.alpha).abs() < 1e-9);
        assert!((a.beta_left - b.beta_right).abs() < 0.02);
        assert!((a.beta_right - b.beta_left).abs() < 0.02);
    }

    #[test]
    fn aggd_rejects_degenerate_input() {
        assert!(aggd_fit(&[0.5; 10]).is_err()); // too few
        assert!(aggd_fit(&vec![0.0; 500]).is_err()); // zero variance
    }

    /// Smooth "natural-ish" plane: multi-scale blurred noise.
    fn smooth_plane(rng: &mut RngState, h: usize, w: usize) -> Plane {
        let coarse_h = h / 8;
        let coarse_w = w / 8;
        let coarse: Vec<f64> = (0..coarse_h * coarse_w).map(|_| rng.uniform()).collect();
        let up = resample_plane(&coarse, coarse_h, coarse_w, h, w, false);
        let fine: Vec<f64> = (0..h * w).map(|_| rng.uniform() * 0.1).collect();
        let data: Vec<f64> = up
            .iter()
            .zip(&fine)
            .map(|(a, b)| (0.2 + 0.6 * a + b).clamp(0.0, 1.0))
            .collect();
        Plane::new(h, w, data)
    }

    fn smooth_image(rng: &mut RngState, h: usize, w: usize) -> ImageRGB {
        let planes: Vec<Plane> = (0..3).map(|_| smooth_plane(rng, h, w)).collect();
        ImageRGB::from_fn(h, w, |c, y, x| planes[c].get(y, x))
    }

    #[test]
    fn feature_dimension_and_determinism() {
        let mut rng = RngState::new(51);
        let img = smooth_image(&mut rng, 96, 96);
        let y = rgb_to_y(&img);
        let f1 = niqe_features(&y, 32).unwrap();
        let f2 = niqe_features(&y, 32).unwrap();
        assert!(!f1.is_empty());
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(a.len(), NIQE_FEATURE_DIM);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn fit_and_score_ordering() {
        let mut rng = RngState::new(52);
        let corpus: Vec<ImageRGB> = (0..10).map(|_| smooth_image(&mut rng, 96, 96)).collect();
        let model = fit_pristine_model(&corpus, 32).unwrap();
        // covariance symmetric
        for i in 0..NIQE_FEATURE_DIM {
            for j in 0..NIQE_FEATURE_DIM {
                let a = model.cov[i * NIQE_FEATURE_DIM + j];
                let b = model.cov[j * NIQE_FEATURE_DIM + i];
                assert!((a - b).abs() < 1e-12);
            }
        }
        let test_img = smooth_image(&mut rng, 96, 96);
        let clean = niqe_score(&test_img, &model).unwrap();
        let mut noise_rng = RngState::new(53);
        let noisy = ImageRGB::from_fn(96, 96, |c, y, x| {
            (test_img.get(c, y, x) + 0.1 * noise_rng.normal()).clamp(0.0, 1.0)
        });
        let degraded = niqe_score(&noisy, &model).unwrap();
        assert!(clean >= 0.0 && degraded >= 0.0);
        assert!(
            degraded > clean,
            "noisy image should score worse: clean={clean} noisy={degraded}"
        );
        // deterministic to the last bit
        assert_eq!(
            niqe_score(&test_img, &model).unwrap().to_bits(),
            clean.to_bits()
        );
    }

    #[test]
    fn flip_changes_score_by_little() {
        // Needs enough patches for the statistics to be near-symmetric.
        let mut rng = RngState::new(54);
        let corpus: Vec<ImageRGB> = (0..12).map(|_| smooth_image(&mut rng, 128, 128)).collect();
        let model = fit_pristine_model(&corpus, 32).unwrap();
        let img = smooth_image(&mut rng, 128, 128);
        let flipped = crate::data::flip_horizontal(&img);
        let a = niqe_score(&img, &model).unwrap();
        let b = niqe_score(&flipped, &model).unwrap();
        assert!((a - b).abs() <= 0.05 * a.max(b), "flip moved score {a} -> {b}");
    }

    /// One sharp patch in an otherwise flat image: the 75% sharpness rule
    /// then selects exactly that patch.
    fn single_texture_image(rng: &mut RngState) -> ImageRGB {
        let texture = smooth_plane(rng, 32, 32);
        ImageRGB::from_fn(64, 64, |_, y, x| {
            if y < 32 && x < 32 {
                texture.get(y, x)
            } else {
                0.5
            }
        })
    }

    #[test]
    fn degenerate_corpus_still_serializes() {
        let mut rng = RngState::new(55);
        let img = single_texture_image(&mut rng);
        // repeating one image yields identical pooled features => zero covariance
        let model = fit_pristine_model(&[img.clone(), img.clone(), img.clone()], 32).unwrap();
        let max_cov = model.cov.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(max_cov < 1e-24, "cov should collapse, max {max_cov}");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        let back = NiqeModel::load(&path).unwrap();
        assert_eq!(back.mean, model.mean);
        assert_eq!(back.cov, model.cov);
        assert_eq!(back.patch_size, model.patch_size);
    }

    #[test]
    fn refit_is_identical() {
        let mut rng = RngState::new(56);
        let corpus: Vec<ImageRGB> = (0..4).map(|_| smooth_image(&mut rng, 96, 96)).collect();
        let m1 = fit_pristine_model(&corpus, 32).unwrap();
        let m2 = fit_pristine_model(&corpus, 32).unwrap();
        assert_eq!(m1.to_bytes(), m2.to_bytes());
    }

    #[test]
    fn corrupted_model_file_is_rejected() {
        let mut rng = RngState::new(57);
        let corpus: Vec<ImageRGB> = (0..2).map(|_| smooth_image(&mut rng, 96, 96)).collect();
        let model = fit_pristine_model(&corpus, 32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            NiqeModel::load(&path),
            Err(Error::Corrupt { .. })
        ));
    }
}
