//! Paired cropping, augmentation, and the deterministic batch stream.
//!
//! Batch `i` is a pure function of `(index, seed, batch, crop, augmentation)`
//! alone: the epoch permutation derives from `(seed, epoch)` and each item's
//! crop/augmentation draws derive from `(seed, epoch, slot)`. That makes the
//! stream random-access, so checkpoint resume replays it exactly without
//! persisting iterator state.

use std::collections::HashMap;
use std::rc::Rc;

use super::{degrade_x4, load_image, AugmentationSpec, DatasetIndex, ImageRGB};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

const LANE_EPOCH: u64 = 0x45_50;
const LANE_ITEM: u64 = 0x49_54;

/// Crop an aligned (HR, LR) patch pair. The HR offset is drawn uniformly
/// over multiples of 4, so the LR window is exactly the offset/4 window.
pub fn random_crop_pair(
    hr: &ImageRGB,
    lr: &ImageRGB,
    hr_crop: usize,
    rng: &mut RngState,
) -> Result<(ImageRGB, ImageRGB)> {
    if hr_crop == 0 || hr_crop % 4 != 0 {
        return Err(Error::Config(format!(
            "hr_crop must be a positive multiple of 4, got {hr_crop}"
        )));
    }
    if lr.height() * 4 != hr.height() || lr.width() * 4 != hr.width() {
        return Err(Error::Data(format!(
            "LR {}x{} is not a quarter of HR {}x{}",
            lr.height(),
            lr.width(),
            hr.height(),
            hr.width()
        )));
    }
    if hr.height() < hr_crop || hr.width() < hr_crop {
        return Err(Error::Data(format!(
            "image {}x{} smaller than crop {hr_crop}",
            hr.height(),
            hr.width()
        )));
    }
    let ty = 4 * rng.below((hr.height() - hr_crop) / 4 + 1);
    let tx = 4 * rng.below((hr.width() - hr_crop) / 4 + 1);
    let hr_patch = hr.crop(ty, tx, hr_crop, hr_crop);
    let lr_patch = lr.crop(ty / 4, tx / 4, hr_crop / 4, hr_crop / 4);
    Ok((hr_patch, lr_patch))
}

/// Horizontal mirror.
pub fn flip_horizontal(img: &ImageRGB) -> ImageRGB {
    let (h, w) = (img.height(), img.width());
    ImageRGB::from_fn(h, w, |c, y, x| img.get(c, y, w - 1 - x))
}

/// Rotate by `k` quarter turns counter-clockwise.
pub fn rotate_quarter(img: &ImageRGB, k: usize) -> ImageRGB {
    let mut out = img.clone();
    for _ in 0..(k % 4) {
        let (h, w) = (out.height(), out.width());
        // (y, x) of the rotated image samples (x, w-1-y) of the source
        let src = out;
        out = ImageRGB::from_fn(w, h, |c, y, x| src.get(c, x, w - 1 - y));
    }
    out
}

/// Apply one randomly sampled transform (flip, then quarter-turn rotation)
/// to both patches. Draw order: flip coin (if enabled), then rotation pick.
pub fn augment(
    hr: &ImageRGB,
    lr: &ImageRGB,
    spec: &AugmentationSpec,
    rng: &mut RngState,
) -> Result<(ImageRGB, ImageRGB)> {
    spec.validate()?;
    let flip = spec.horizontal_flip && rng.flip();
    let rot = spec.rotations[rng.below(spec.rotations.len())] as usize / 90;
    let apply = |img: &ImageRGB| {
        let flipped = if flip { flip_horizontal(img) } else { img.clone() };
        rotate_quarter(&flipped, rot)
    };
    Ok((apply(hr), apply(lr)))
}

struct CachedPair {
    hr: ImageRGB,
    lr: ImageRGB,
}

/// Bounded FIFO cache of decoded (HR, LR) pairs keyed by dataset position.
struct PairCache {
    map: HashMap<usize, Rc<CachedPair>>,
    order: Vec<usize>,
    used_bytes: usize,
    budget_bytes: usize,
}

impl PairCache {
    fn new(budget_bytes: usize) -> Self {
        Self {
            map: HashMap::new(),
            order: Vec::new(),
            used_bytes: 0,
            budget_bytes,
        }
    }

    fn insert(&mut self, key: usize, pair: Rc<CachedPair>) {
        let cost = (pair.hr.height() * pair.hr.width() + pair.lr.height() * pair.lr.width())
            * 3
            * std::mem::size_of::<f64>();
        while self.used_bytes + cost > self.budget_bytes && !self.order.is_empty() {
            let oldest = self.order.remove(0);
            if let Some(old) = self.map.remove(&oldest) {
                self.used_bytes -= (old.hr.height() * old.hr.width()
                    + old.lr.height() * old.lr.width())
                    * 3
                    * std::mem::size_of::<f64>();
            }
        }
        self.used_bytes += cost;
        self.order.push(key);
        self.map.insert(key, pair);
    }
}

/// Infinite, seeded, epoch-shuffled stream of `(hr, lr)` tensor batches.
pub struct BatchIterator {
    index: DatasetIndex,
    batch: usize,
    hr_crop: usize,
    aug: AugmentationSpec,
    seed: u64,
    position: u64,
    epoch_perm: Option<(u64, Vec<usize>)>,
    cache: PairCache,
}

const DEFAULT_CACHE_BYTES: usize = 512 << 20;

impl BatchIterator {
    pub fn new(
        index: DatasetIndex,
        batch: usize,
        hr_crop: usize,
        aug: AugmentationSpec,
        seed: u64,
    ) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        if batch == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if hr_crop == 0 || hr_crop % 4 != 0 {
            return Err(Error::Config(format!(
                "hr_crop must be a positive multiple of 4, got {hr_crop}"
            )));
        }
        aug.validate()?;
        Ok(Self {
            index,
            batch,
            hr_crop,
            aug,
            seed,
            position: 0,
            epoch_perm: None,
            cache: PairCache::new(DEFAULT_CACHE_BYTES),
        })
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.index.len().div_ceil(self.batch) as u64
    }

    /// Jump the stream (used by checkpoint resume).
    pub fn set_position(&mut self, batch_index: u64) {
        self.position = batch_index;
    }

    fn permutation(&mut self, epoch: u64) -> Vec<usize> {
        if let Some((e, perm)) = &self.epoch_perm {
            if *e == epoch {
                return perm.clone();
            }
        }
        let mut perm: Vec<usize> = (0..self.index.len()).collect();
        let mut rng = RngState::derive(self.seed, &[LANE_EPOCH, epoch]);
        rng.shuffle(&mut perm);
        self.epoch_perm = Some((epoch, perm.clone()));
        perm
    }

    fn load_pair(&mut self, entry_idx: usize) -> Result<Rc<CachedPair>> {
        if let Some(pair) = self.cache.map.get(&entry_idx) {
            return Ok(pair.clone());
        }
        let entry = &self.index.entries()[entry_idx];
        let hr = load_image(&entry.hr_path)?;
        let lr = match &entry.lr_path {
            Some(path) => load_image(path)?,
            None => degrade_x4(&hr).map_err(|e| {
                Error::Data(format!("{}: {e}", entry.hr_path.display()))
            })?,
        };
        let pair = Rc::new(CachedPair { hr, lr });
        self.cache.insert(entry_idx, pair.clone());
        Ok(pair)
    }

    /// Batch `i` of the stream (random access).
    pub fn nth_batch(&mut self, i: u64) -> Result<(Tensor, Tensor)> {
        let bpe = self.batches_per_epoch();
        let epoch = i / bpe;
        let pos = (i % bpe) as usize;
        let perm = self.permutation(epoch);
        let n = self.index.len();
        let lo = pos * self.batch;
        let hi = ((pos + 1) * self.batch).min(n);
        let mut hr_patches = Vec::with_capacity(hi - lo);
        let mut lr_patches = Vec::with_capacity(hi - lo);
        for slot in lo..hi {
            let entry_idx = perm[slot];
            let pair = self.load_pair(entry_idx)?;
            let stem = self.index.entries()[entry_idx].stem.clone();
            let mut rng = RngState::derive(self.seed, &[LANE_ITEM, epoch, slot as u64]);
            let (hp, lp) = random_crop_pair(&pair.hr, &pair.lr, self.hr_crop, &mut rng)
                .map_err(|e| Error::Data(format!("{stem}: {e}")))?;
            let (hp, lp) = augment(&hp, &lp, &self.aug, &mut rng)?;
            hr_patches.push(hp);
            lr_patches.push(lp);
        }
        let hr_refs: Vec<&ImageRGB> = hr_patches.iter().collect();
        let lr_refs: Vec<&ImageRGB> = lr_patches.iter().collect();
        Ok((ImageRGB::to_batch(&hr_refs)?, ImageRGB::to_batch(&lr_refs)?))
    }
}

impl Iterator for BatchIterator {
    type Item = Result<(Tensor, Tensor)>;

    fn next(&mut self) -> Option<Self::Item> {
        let out = self.nth_batch(self.position);
        self.position += 1;
        Some(out)
    }
}
