//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use std::path::Path;

use sr_core::data::{save_image, DatasetIndex, ImageRGB};
use sr_core::rng::RngState;

/// Smooth multi-scale synthetic image; statistically "natural-ish" so NIQE
/// and training behave sensibly.
pub fn synthetic_image(seed: u64, h: usize, w: usize) -> ImageRGB {
    let mut rng = RngState::derive(seed, &[0x1AA6E]);
    let coarse_h = (h / 8).max(2);
    let coarse_w = (w / 8).max(2);
    let mut planes = Vec::new();
    for _ in 0..3 {
        let coarse: Vec<f64> = (0..coarse_h * coarse_w).map(|_| rng.uniform()).collect();
        let up = sr_core::data::resample_plane(&coarse, coarse_h, coarse_w, h, w, false);
        let fine: Vec<f64> = (0..h * w).map(|_| 0.08 * rng.uniform()).collect();
        let plane: Vec<f64> = up
            .iter()
            .zip(&fine)
            .map(|(a, b)| (0.15 + 0.65 * a + b).clamp(0.0, 1.0))
            .collect();
        planes.push(plane);
    }
    ImageRGB::from_fn(h, w, |c, y, x| planes[c][y * w + x])
}

/// Write `count` synthetic HR images under `<root>/HR` and build the index.
pub fn write_dataset(root: &Path, count: usize, h: usize, w: usize) -> DatasetIndex {
    let hr = root.join("HR");
    std::fs::create_dir_all(&hr).unwrap();
    for i in 0..count {
        let img = synthetic_image(1000 + i as u64, h, w);
        save_image(&img, &hr.join(format!("img{i:03}.png"))).unwrap();
    }
    DatasetIndex::build(root).unwrap()
}

/// Trailing moving average of width `window` ending at 1-based iteration
/// `iter` over per-iteration loss values.
pub fn smoothed(values: &[f64], iter: usize, window: usize) -> f64 {
    assert!(iter >= 1 && iter <= values.len());
    let lo = iter.saturating_sub(window);
    let slice = &values[lo..iter];
    slice.iter().sum::<f64>() / slice.len() as f64
}
