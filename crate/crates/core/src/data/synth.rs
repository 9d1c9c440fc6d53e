//! Synthetic piecewise-constant scenes with known dense labels.
//!
//! Class 0 is the background. Each shape is an axis-aligned rectangle or a
//! disc painted with a class in `1..K`; later shapes overwrite earlier ones.
//! Pixel intensity is the class mean `k / (K - 1)` in every channel plus
//! i.i.d. Gaussian noise, clamped to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabelMap, LabeledImage};
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ImageStack};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub num_shapes: usize,
    pub noise_std: f64,
    pub num_classes: usize,
    pub seed: u64,
    pub channels: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_shapes: 3,
            noise_std: 0.1,
            num_classes: 2,
            seed: 0,
            channels: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 3 || self.width < 3 {
            return Err(Error::DimensionTooSmall {
                height: self.height,
                width: self.width,
                min: 3,
            });
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_std {} must be finite and non-negative",
                self.noise_std
            )));
        }
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(Error::InvalidConfig(format!(
                "num_classes {} must be in 2..=255",
                self.num_classes
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "channels {} must be 1 or 3",
                self.channels
            )));
        }
        Ok(())
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<LabeledImage> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels = LabelMap::filled(h, w, 0);
    let side = h.min(w) as f64;

    for _ in 0..cfg.num_shapes {
        let class = rng.random_range(1..cfg.num_classes) as u8;
        let cr = rng.random_range(0.0..h as f64);
        let cc = rng.random_range(0.0..w as f64);
        if rng.random_bool(0.5) {
            let half_h = rng.random_range(side / 12.0..side / 5.0);
            let half_w = rng.random_range(side / 12.0..side / 5.0);
            for r in 0..h {
                for c in 0..w {
                    let (dr, dc) = (r as f64 + 0.5 - cr, c as f64 + 0.5 - cc);
                    if dr.abs() <= half_h && dc.abs() <= half_w {
                        labels.set(r, c, class);
                    }
                }
            }
        } else {
            let radius = rng.random_range(side / 10.0..side / 5.0);
            for r in 0..h {
                for c in 0..w {
                    let (dr, dc) = (r as f64 + 0.5 - cr, c as f64 + 0.5 - cc);
                    if dr * dr + dc * dc <= radius * radius {
                        labels.set(r, c, class);
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0, cfg.noise_std).expect("validated noise_std");
    let denom = (cfg.num_classes - 1) as f64;
    let planes = (0..cfg.channels)
        .map(|_| {
            let data = labels
                .data()
                .iter()
                .map(|&l| {
                    let mean = f64::from(l) / denom;
                    let n = if cfg.noise_std > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    (mean + n).clamp(0.0, 1.0)
                })
                .collect();
            Grid2D::new(h, w, data)
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledImage::new(ImageStack::new(planes)?, labels)
}

/// Tag mixed into per-image seeds of [`synth_split`].
const SPLIT_TAG: u64 = 0x5917;

pub const TRAIN_SPLIT: u64 = 0;
pub const TEST_SPLIT: u64 = 1;

/// `count` scenes; image `i` of split `split` is generated with seed
/// `derive_seed(cfg.seed, [tag, split, i])`.
pub fn synth_split(cfg: &SynthConfig, count: usize, split: u64) -> Result<Vec<LabeledImage>> {
    (0..count)
        .map(|i| {
            synth_generate(&SynthConfig {
                seed: derive_seed(cfg.seed, &[SPLIT_TAG, split, i as u64]),
                ..cfg.clone()
            })
        })
        .collect()
}
