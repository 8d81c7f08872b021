//! Dataset handling: PNG I/O, bicubic degradation, paired cropping,
//! augmentation, and deterministic batched iteration.
//!
//! Dataset layout on disk: `<root>/HR/*.png` with an optional `<root>/LR/`
//! holding exact quarter-resolution counterparts under the same stems. When
//! no LR image exists, the pipeline degrades the HR image on the fly.

mod io;
mod pipeline;
mod resize;

pub use io::{load_image, save_image};
pub use pipeline::{augment, flip_horizontal, random_crop_pair, rotate_quarter, BatchIterator};
pub use resize::{bicubic_resize, degrade_x4, resample_plane, resize_axis_weights};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// An RGB image with values in [0, 1], stored channel-major (`[c][y][x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageRGB {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "image dims must be >= 1");
        Self {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::new(height, width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    img.set(c, y, x, f(c, y, x).clamp(0.0, 1.0));
                }
            }
        }
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Channel plane as a flat `[y][x]` slice.
    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    #[cfg(test)]
    pub(crate) fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> ImageRGB {
        assert!(top + height <= self.height && left + width <= self.width);
        ImageRGB::from_parts(height, width, {
            let mut data = Vec::with_capacity(3 * height * width);
            for c in 0..3 {
                for y in 0..height {
                    let row = (c * self.height + top + y) * self.width + left;
                    data.extend_from_slice(&self.data[row..row + width]);
                }
            }
            data
        })
    }

    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), 3 * height * width);
        Self {
            height,
            width,
            data,
        }
    }

    /// Stack images into a `(batch, 3, h, w)` tensor (no gradient).
    pub fn to_batch(images: &[&ImageRGB]) -> Result<Tensor> {
        if images.is_empty() {
            return Err(Error::Data("empty image batch".into()));
        }
        let (h, w) = (images[0].height, images[0].width);
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if img.height != h || img.width != w {
                return Err(Error::Data("mismatched image sizes in batch".into()));
            }
            data.extend_from_slice(&img.data);
        }
        Tensor::from_vec(data, Shape::new(images.len(), 3, h, w))
    }

    /// Extract sample `n` from a `(batch, 3, h, w)` tensor, clamped to [0, 1].
    pub fn from_tensor(t: &Tensor, n: usize) -> ImageRGB {
        let s = t.shape();
        assert_eq!(s.c, 3, "expected an RGB tensor");
        assert!(n < s.n);
        let data = t.data();
        let chunk = 3 * s.h * s.w;
        let slice = &data[n * chunk..(n + 1) * chunk];
        ImageRGB::from_parts(
            s.h,
            s.w,
            slice.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }
}

/// One dataset record: an HR image and optionally its pre-made LR pair.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub stem: String,
    pub hr_path: PathBuf,
    pub lr_path: Option<PathBuf>,
}

/// Deterministically ordered list of training records.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    entries: Vec<DatasetEntry>,
}

impl DatasetIndex {
    /// Scan `<root>/HR/*.png` (sorted by stem) and pair stems with
    /// `<root>/LR/*.png` when present. LR dimensions are verified to be
    /// exactly a quarter of the HR dimensions.
    pub fn build(root: &Path) -> Result<Self> {
        let hr_dir = root.join("HR");
        if !hr_dir.is_dir() {
            return Err(Error::Data(format!(
                "HR directory not found: {}",
                hr_dir.display()
            )));
        }
        let lr_dir = root.join("LR");
        let mut entries = Vec::new();
        let mut stems: Vec<(String, PathBuf)> = Vec::new();
        for entry in std::fs::read_dir(&hr_dir).map_err(|e| Error::io(&hr_dir, e))? {
            let entry = entry.map_err(|e| Error::io(&hr_dir, e))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some("png") {
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::Data(format!("bad file name: {}", path.display())))?
                    .to_string();
                stems.push((stem, path));
            }
        }
        stems.sort_by(|a, b| a.0.cmp(&b.0));
        for (stem, hr_path) in stems {
            let lr_candidate = lr_dir.join(format!("{stem}.png"));
            let lr_path = lr_candidate.is_file().then_some(lr_candidate);
            if let Some(lr) = &lr_path {
                let (hw, hh) = image_dims(&hr_path)?;
                let (lw, lh) = image_dims(lr)?;
                if hw != 4 * lw || hh != 4 * lh {
                    return Err(Error::Data(format!(
                        "{}: LR {}x{} is not exactly a quarter of HR {}x{}",
                        stem, lw, lh, hw, hh
                    )));
                }
            }
            entries.push(DatasetEntry {
                stem,
                hr_path,
                lr_path,
            });
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: Vec<DatasetEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }
}

fn image_dims(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok((w as usize, h as usize))
}

/// Augmentation policy: optional horizontal flips and a set of quarter-turn
/// rotations sampled uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSpec {
    pub horizontal_flip: bool,
    pub rotations: Vec<u16>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            horizontal_flip: true,
            rotations: vec![0, 90, 180, 270],
        }
    }
}

impl AugmentationSpec {
    /// No-op policy.
    pub fn identity() -> Self {
        Self {
            horizontal_flip: false,
            rotations: vec![0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotations.is_empty() {
            return Err(Error::Config("rotation set must not be empty".into()));
        }
        for r in &self.rotations {
            if ![0, 90, 180, 270].contains(r) {
                return Err(Error::Config(format!(
                    "rotations must be multiples of 90 in 0..=270, got {r}"
                )));
            }
        }
        Ok(())
    }
}
