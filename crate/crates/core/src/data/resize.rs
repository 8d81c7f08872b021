//! Separable cubic-convolution resampling (a = -0.5) with half-pixel center
//! alignment, replicate edge handling, and antialias kernel stretching on
//! downscale. This is the conventional degradation model used by
//! super-resolution benchmarks, so user-supplied LR sets line up.

use super::ImageRGB;
use crate::error::{Error, Result};

/// Cubic convolution kernel with a = -0.5.
fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 1.0 {
        (1.5 * ax - 2.5) * ax * ax + 1.0
    } else if ax < 2.0 {
        ((-0.5 * ax + 2.5) * ax - 4.0) * ax + 2.0
    } else {
        0.0
    }
}

/// Per-output-coordinate sample positions and normalized weights for one
/// axis. `starts[i]` is the first (unclamped) source index of output `i`;
/// the `taps` weights follow consecutively in `weights`. Out-of-range
/// sample indices clamp to the edge.
pub struct AxisWeights {
    pub taps: usize,
    pub starts: Vec<isize>,
    pub weights: Vec<f64>,
}

/// Compute resampling weights along one axis. When `antialias` and
/// downscaling, the kernel support is stretched by the inverse scale and the
/// weights renormalized to sum to exactly 1.
pub fn resize_axis_weights(in_len: usize, out_len: usize, antialias: bool) -> AxisWeights {
    let scale = out_len as f64 / in_len as f64;
    let kernel_scale = if antialias && scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / kernel_scale;
    let taps = (2.0 * support).ceil() as usize + 2;
    let mut starts = Vec::with_capacity(out_len);
    let mut weights = Vec::with_capacity(out_len * taps);
    for i in 0..out_len {
        let u = (i as f64 + 0.5) / scale - 0.5;
        let left = (u - support).floor() as isize + 1;
        starts.push(left);
        let mut sum = 0.0;
        let base = weights.len();
        for t in 0..taps {
            let j = left + t as isize;
            let w = kernel_scale * cubic(kernel_scale * (u - j as f64));
            weights.push(w);
            sum += w;
        }
        for w in &mut weights[base..] {
            *w /= sum;
        }
    }
    AxisWeights {
        taps,
        starts,
        weights,
    }
}

/// Resample a single `[y][x]` plane to `out_h x out_w`. No value clamping.
pub fn resample_plane(
    src: &[f64],
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    antialias: bool,
) -> Vec<f64> {
    assert_eq!(src.len(), in_h * in_w);
    // Horizontal pass: in_h x out_w
    let wx = resize_axis_weights(in_w, out_w, antialias);
    let mut tmp = vec![0.0; in_h * out_w];
    for y in 0..in_h {
        let src_row = &src[y * in_w..(y + 1) * in_w];
        let dst_row = &mut tmp[y * out_w..(y + 1) * out_w];
        for (ox, dst) in dst_row.iter_mut().enumerate() {
            let start = wx.starts[ox];
            let ws = &wx.weights[ox * wx.taps..(ox + 1) * wx.taps];
            let mut acc = 0.0;
            for (t, w) in ws.iter().enumerate() {
                let j = (start + t as isize).clamp(0, in_w as isize - 1) as usize;
                acc += w * src_row[j];
            }
            *dst = acc;
        }
    }
    // Vertical pass: out_h x out_w
    let wy = resize_axis_weights(in_h, out_h, antialias);
    let mut out = vec![0.0; out_h * out_w];
    for oy in 0..out_h {
        let start = wy.starts[oy];
        let ws = &wy.weights[oy * wy.taps..(oy + 1) * wy.taps];
        let dst_row = &mut out[oy * out_w..(oy + 1) * out_w];
        for (t, w) in ws.iter().enumerate() {
            let j = (start + t as isize).clamp(0, in_h as isize - 1) as usize;
            let src_row = &tmp[j * out_w..(j + 1) * out_w];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += w * s;
            }
        }
    }
    out
}

/// Bicubic resize of an RGB image; output values clamp to [0, 1].
pub fn bicubic_resize(img: &ImageRGB, out_h: usize, out_w: usize, antialias: bool) -> ImageRGB {
    assert!(out_h >= 1 && out_w >= 1, "output dims must be >= 1");
    let (h, w) = (img.height(), img.width());
    let mut data = Vec::with_capacity(3 * out_h * out_w);
    for c in 0..3 {
        let plane = resample_plane(img.plane(c), h, w, out_h, out_w, antialias);
        data.extend(plane.into_iter().map(|v| v.clamp(0.0, 1.0)));
    }
    ImageRGB::from_parts(out_h, out_w, data)
}

/// Canonical x4 degradation: antialiased bicubic downscale to a quarter of
/// each dimension. HR dimensions must be divisible by 4.
pub fn degrade_x4(hr: &ImageRGB) -> Result<ImageRGB> {
    let (h, w) = (hr.height(), hr.width());
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Data(format!(
            "HR dimensions {h}x{w} must be divisible by 4"
        )));
    }
    Ok(bicubic_resize(hr, h / 4, w / 4, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_partition_of_unity() {
        for (in_len, out_len, aa) in [
            (8usize, 2usize, true),
            (8, 2, false),
            (5, 17, true),
            (100, 37, true),
            (33, 32, false),
        ] {
            let aw = resize_axis_weights(in_len, out_len, aa);
            for i in 0..out_len {
                let s: f64 = aw.weights[i * aw.taps..(i + 1) * aw.taps].iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "sum {s} at coord {i}");
            }
        }
    }

    #[test]
    fn constant_image_is_preserved() {
        let img = ImageRGB::from_fn(12, 16, |_, _, _| 0.43);
        for (oh, ow, aa) in [(3, 4, true), (24, 32, false), (5, 7, true)] {
            let out = bicubic_resize(&img, oh, ow, aa);
            for c in 0..3 {
                for v in out.plane(c) {
                    assert!((v - 0.43).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identity_resize_is_identity() {
        let img = ImageRGB::from_fn(9, 7, |c, y, x| (c + 1) as f64 * 0.07 + 0.01 * (y * 7 + x) as f64);
        let out = bicubic_resize(&img, 9, 7, true);
        for c in 0..3 {
            for (a, b) in out.plane(c).iter().zip(img.plane(c)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degrade_shape_and_composition() {
        let img = ImageRGB::from_fn(128, 64, |c, y, x| {
            0.5 + 0.3 * ((y + x + c) as f64 * 0.21).sin() * 0.5
        });
        let lr = degrade_x4(&img).unwrap();
        assert_eq!(lr.height(), 32);
        assert_eq!(lr.width(), 16);
        let direct = bicubic_resize(&img, 32, 16, true);
        assert_eq!(lr, direct);
    }

    #[test]
    fn degrade_rejects_unaligned_dims() {
        let img = ImageRGB::new(10, 12);
        assert!(degrade_x4(&img).is_err());
    }

    // Independent dense-matrix evaluation of the same kernel definition:
    // per output pixel, evaluate the 2-D tap window directly (own cubic
    // implementation, own normalization) and accumulate clamped taps into a
    // full (out_pixels x in_pixels) matrix.
    fn dense_resize_oracle(
        src: &[f64],
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
        antialias: bool,
    ) -> Vec<f64> {
        fn kernel(x: f64) -> f64 {
            let a = -0.5;
            let ax = x.abs();
            if ax <= 1.0 {
                (a + 2.0) * ax.powi(3) - (a + 3.0) * ax.powi(2) + 1.0
            } else if ax < 2.0 {
                a * ax.powi(3) - 5.0 * a * ax.powi(2) + 8.0 * a * ax - 4.0 * a
            } else {
                0.0
            }
        }
        let axis = |in_len: usize, out_len: usize, i: usize| -> Vec<(usize, f64)> {
            let scale = out_len as f64 / in_len as f64;
            let ks = if antialias && scale < 1.0 { scale } else { 1.0 };
            let support = 2.0 / ks;
            let u = (i as f64 + 0.5) / scale - 0.5;
            let left = (u - support).floor() as isize + 1;
            let taps = (2.0 * support).ceil() as usize + 2;
            let raw: Vec<f64> = (0..taps)
                .map(|t| ks * kernel(ks * (u - (left + t as isize) as f64)))
                .collect();
            let sum: f64 = raw.iter().sum();
            (0..taps)
                .map(|t| {
                    let j = (left + t as isize).clamp(0, in_len as isize - 1) as usize;
                    (j, raw[t] / sum)
                })
                .collect()
        };
        let mut matrix = vec![0.0; out_h * out_w * in_h * in_w];
        for oy in 0..out_h {
            let wys = axis(in_h, out_h, oy);
            for ox in 0..out_w {
                let wxs = axis(in_w, out_w, ox);
                let row = (oy * out_w + ox) * in_h * in_w;
                for (jy, wy) in &wys {
                    for (jx, wx) in &wxs {
                        matrix[row + jy * in_w + jx] += wy * wx;
                    }
                }
            }
        }
        let mut out = vec![0.0; out_h * out_w];
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &matrix[o * in_h * in_w..(o + 1) * in_h * in_w];
            *out_v = row.iter().zip(src).map(|(m, s)| m * s).sum();
        }
        out
    }

    #[test]
    fn ramp_downscale_matches_dense_matrix_oracle() {
        // 8x8 ramp kept away from [0,1] bounds so clamping is a no-op.
        let src: Vec<f64> = (0..64).map(|i| 0.2 + 0.6 * i as f64 / 63.0).collect();
        let ours = resample_plane(&src, 8, 8, 2, 2, true);
        let oracle = dense_resize_oracle(&src, 8, 8, 2, 2, true);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // and an upscale case
        let up = resample_plane(&src, 8, 8, 11, 13, false);
        let up_oracle = dense_resize_oracle(&src, 8, 8, 11, 13, false);
        for (a, b) in up.iter().zip(&up_oracle) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
