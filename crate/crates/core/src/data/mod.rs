//! Images, label maps, sparse label sets and patch extraction.

mod dataset;
mod pnm;
mod sparse_csv;
mod synth;

pub use dataset::{load_dataset_dir, save_dataset_dir, DatasetEntry, LABEL_SUFFIX};
pub use pnm::{
    load_image, load_labels, load_prob_channel, read_pnm, save_image, save_labels,
    save_prob_channel, write_pnm, Pnm,
};
pub use sparse_csv::{load_sparse, parse_sparse, render_sparse, save_sparse, SPARSE_HEADER};
pub use synth::{synth_generate, synth_split, SynthConfig, TEST_SPLIT, TRAIN_SPLIT};

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ImageStack};
use crate::seed::derive_seed;

/// Label value marking a pixel without ground truth.
pub const UNLABELED: u8 = 255;

/// Per-pixel class indices; [`UNLABELED`] marks missing labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::SizeMismatch {
                expected: format!("{} labels for {height}x{width}", height * width),
                actual: format!("{} labels", data.len()),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            data: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, label: u8) {
        self.data[row * self.width + col] = label;
    }

    /// Fails if any labeled pixel is outside `0..num_classes`.
    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&l| l != UNLABELED && usize::from(l) >= num_classes)
        {
            Some(&l) => Err(Error::InvalidLabel {
                label: l.into(),
                num_classes,
            }),
            None => Ok(()),
        }
    }

    pub fn num_labeled(&self) -> usize {
        self.data.iter().filter(|&&l| l != UNLABELED).count()
    }
}

/// An image with its (possibly partial) dense label map.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ImageStack,
    pub labels: LabelMap,
}

impl LabeledImage {
    pub fn new(image: ImageStack, labels: LabelMap) -> Result<Self> {
        if image.height() != labels.height() || image.width() != labels.width() {
            return Err(Error::SizeMismatch {
                expected: format!("{}x{} labels", image.height(), image.width()),
                actual: format!("{}x{}", labels.height(), labels.width()),
            });
        }
        Ok(Self { image, labels })
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}

/// One supervised pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SparseLabel {
    pub image_id: usize,
    pub row: usize,
    pub col: usize,
    pub class: u8,
}

/// The supervised pixel set: distinct `(image, row, col)` positions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseLabelSet {
    entries: Vec<SparseLabel>,
}

impl SparseLabelSet {
    /// Rejects duplicate positions.
    pub fn new(entries: Vec<SparseLabel>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert((e.image_id, e.row, e.col)) {
                return Err(Error::DuplicateLabel {
                    image_id: e.image_id,
                    row: e.row,
                    col: e.col,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[SparseLabel] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Concatenates sets for different images.
    pub fn merge(sets: impl IntoIterator<Item = SparseLabelSet>) -> Result<Self> {
        Self::new(sets.into_iter().flat_map(|s| s.entries).collect())
    }

    /// Checks positions and classes against the images they refer to.
    pub fn validate(&self, images: &[LabeledImage], num_classes: usize) -> Result<()> {
        for e in &self.entries {
            let img = images.get(e.image_id).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "sparse label refers to image {} but only {} images",
                    e.image_id,
                    images.len()
                ))
            })?;
            if e.row >= img.height() || e.col >= img.width() {
                return Err(Error::OutOfBounds {
                    row: e.row,
                    col: e.col,
                    height: img.height(),
                    width: img.width(),
                });
            }
            if usize::from(e.class) >= num_classes {
                return Err(Error::InvalidLabel {
                    label: e.class.into(),
                    num_classes,
                });
            }
        }
        Ok(())
    }
}

/// Draws `n` distinct labeled pixels uniformly without replacement.
///
/// Entries come back sorted by position; the draw is a pure function of `seed`.
pub fn sample_sparse_labels(
    dense: &LabeledImage,
    image_id: usize,
    n: usize,
    seed: u64,
) -> Result<SparseLabelSet> {
    let labels = &dense.labels;
    let candidates: Vec<usize> = (0..labels.data.len())
        .filter(|&i| labels.data[i] != UNLABELED)
        .collect();
    if n > candidates.len() {
        return Err(Error::TooManySamples {
            requested: n,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), n)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    let entries = picked
        .into_iter()
        .map(|i| SparseLabel {
            image_id,
            row: i / labels.width,
            col: i % labels.width,
            class: labels.data[i],
        })
        .collect();
    SparseLabelSet::new(entries)
}

/// Samples `n` pixels from every image; image `i` uses `derive_seed(seed, [i])`.
pub fn sample_dataset(images: &[LabeledImage], n: usize, seed: u64) -> Result<SparseLabelSet> {
    let sets = images
        .iter()
        .enumerate()
        .map(|(i, img)| sample_sparse_labels(img, i, n, derive_seed(seed, &[i as u64])))
        .collect::<Result<Vec<_>>>()?;
    SparseLabelSet::merge(sets)
}

/// Mirror index about the border without repeating the edge pixel
/// (`-1 -> 1`, `n -> n - 2`), folding repeatedly for far offsets.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// The `patch_size x patch_size` window centered on `(row, col)`, with
/// out-of-bounds positions mirrored back into the image.
pub fn extract_patch(
    image: &ImageStack,
    row: usize,
    col: usize,
    patch_size: usize,
) -> Result<ImageStack> {
    let mut flat = Vec::new();
    extract_patch_flat(image, row, col, patch_size, &mut flat)?;
    let area = patch_size * patch_size;
    let channels = flat
        .chunks(area)
        .map(|c| Grid2D::new(patch_size, patch_size, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    ImageStack::new(channels)
}

/// As [`extract_patch`], writing channel-major values into `out`.
pub(crate) fn extract_patch_flat(
    image: &ImageStack,
    row: usize,
    col: usize,
    patch_size: usize,
    out: &mut Vec<f64>,
) -> Result<()> {
    let (h, w) = (image.height(), image.width());
    if row >= h || col >= w {
        return Err(Error::OutOfBounds {
            row,
            col,
            height: h,
            width: w,
        });
    }
    if patch_size % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "patch size must be odd, got {patch_size}"
        )));
    }
    let half = (patch_size / 2) as isize;
    out.clear();
    out.reserve(image.num_channels() * patch_size * patch_size);
    let cols: Vec<usize> = (0..patch_size as isize)
        .map(|dc| reflect_index(col as isize + dc - half, w))
        .collect();
    for ch in image.channels() {
        let data = ch.data();
        for dr in 0..patch_size as isize {
            let r = reflect_index(row as isize + dr - half, h);
            let src = &data[r * w..(r + 1) * w];
            out.extend(cols.iter().map(|&c| src[c]));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageStack {
        ImageStack::single(Grid2D::from_fn(h, w, |r, c| (r * w + c) as f64))
    }

    fn fully_labeled(h: usize, w: usize) -> LabeledImage {
        let labels = LabelMap::new(h, w, (0..h * w).map(|i| (i % 3) as u8).collect()).unwrap();
        LabeledImage::new(ramp(h, w), labels).unwrap()
    }

    #[test]
    fn sampling_edge_cases() {
        let img = fully_labeled(4, 5);
        assert!(sample_sparse_labels(&img, 0, 0, 1).unwrap().is_empty());
        let all = sample_sparse_labels(&img, 2, 20, 1).unwrap();
        assert_eq!(all.len(), 20);
        let mut positions: Vec<_> = all.entries().iter().map(|e| (e.row, e.col)).collect();
        positions.dedup();
        assert_eq!(positions.len(), 20);
        for e in all.entries() {
            assert_eq!(e.image_id, 2);
            assert_eq!(e.class, img.labels.get(e.row, e.col));
        }
        assert!(matches!(
            sample_sparse_labels(&img, 0, 21, 1),
            Err(Error::TooManySamples { requested: 21, available: 20 })
        ));
    }

    #[test]
    fn sampling_skips_unlabeled_pixels() {
        let mut img = fully_labeled(3, 3);
        for c in 0..3 {
            img.labels.set(1, c, UNLABELED);
        }
        let s = sample_sparse_labels(&img, 0, 6, 9).unwrap();
        assert!(s.entries().iter().all(|e| e.row != 1));
        assert!(sample_sparse_labels(&img, 0, 7, 9).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let img = fully_labeled(64, 64);
        let a = sample_sparse_labels(&img, 0, 10, 5).unwrap();
        let b = sample_sparse_labels(&img, 0, 10, 5).unwrap();
        let c = sample_sparse_labels(&img, 0, 10, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn duplicates_are_rejected() {
        let e = SparseLabel {
            image_id: 0,
            row: 1,
            col: 1,
            class: 0,
        };
        assert!(matches!(
            SparseLabelSet::new(vec![e, SparseLabel { class: 1, ..e }]),
            Err(Error::DuplicateLabel { .. })
        ));
    }

    #[test]
    fn interior_patch_is_a_sub_window() {
        let img = ramp(7, 8);
        let p = extract_patch(&img, 3, 4, 5).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(p.channel(0).get(r, c), img.channel(0).get(1 + r, 2 + c));
            }
        }
    }

    #[test]
    fn corner_patch_is_mirrored() {
        // 3x3 image, values 0..8. The window at (0, 0) reflects row/col -1 onto 1.
        let img = ramp(3, 3);
        let p = extract_patch(&img, 0, 0, 3).unwrap();
        assert_eq!(p.channel(0).data(), &[4.0, 3.0, 4.0, 1.0, 0.0, 1.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn border_patches_match_index_oracle() {
        let img = ramp(5, 5);
        let oracle = |i: isize| -> usize {
            // Explicit unrolled reflection for a 5-pixel axis and offsets in [-3, 7].
            match i {
                -3 => 3,
                -2 => 2,
                -1 => 1,
                0..=4 => i as usize,
                5 => 3,
                6 => 2,
                7 => 1,
                _ => unreachable!(),
            }
        };
        for row in 0..5usize {
            for col in 0..5usize {
                if (1..4).contains(&row) && (1..4).contains(&col) {
                    continue;
                }
                let p = extract_patch(&img, row, col, 7).unwrap();
                for dr in 0..7isize {
                    for dc in 0..7isize {
                        let r = oracle(row as isize + dr - 3);
                        let c = oracle(col as isize + dc - 3);
                        assert_eq!(
                            p.channel(0).get(dr as usize, dc as usize),
                            img.channel(0).get(r, c)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn reflection_handles_tiny_axes() {
        assert_eq!(reflect_index(-5, 1), 0);
        assert_eq!(reflect_index(4, 1), 0);
        assert_eq!(reflect_index(-1, 2), 1);
        assert_eq!(reflect_index(2, 2), 0);
        assert_eq!(reflect_index(-4, 2), 0);
    }

    #[test]
    fn out_of_bounds_center() {
        let img = ramp(3, 3);
        assert!(matches!(
            extract_patch(&img, 3, 0, 3),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(extract_patch(&img, 0, 0, 4).is_err());
    }

    #[test]
    fn sample_dataset_uses_per_image_seeds() {
        let imgs = vec![fully_labeled(8, 8), fully_labeled(8, 8)];
        let s = sample_dataset(&imgs, 3, 11).unwrap();
        assert_eq!(s.len(), 6);
        let first = sample_sparse_labels(&imgs[0], 0, 3, derive_seed(11, &[0])).unwrap();
        assert_eq!(&s.entries()[..3], first.entries());
        s.validate(&imgs, 3).unwrap();
        assert!(s.validate(&imgs[..1], 3).is_err());
        assert!(s.validate(&imgs, 2).is_err());
    }

    #[test]
    fn label_class_check() {
        let mut m = LabelMap::filled(2, 2, 1);
        m.set(0, 0, UNLABELED);
        assert!(m.check_classes(2).is_ok());
        assert!(m.check_classes(1).is_err());
        assert_eq!(m.num_labeled(), 3);
    }
}
