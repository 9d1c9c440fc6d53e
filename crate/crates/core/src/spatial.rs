//! Unsupervised spatial losses on probability maps.
//!
//! A spatial loss scores the 3x3 neighborhood of every interior pixel of a
//! class-probability channel. Its gradient with respect to the classifier
//! parameters is a linear combination of the classifier's own gradients at
//! the nine neighbors; [`SpatialLoss::theta_coeffs`] supplies the weights.
//!
//! [`TotalVariation`] is the anisotropic L1 variant built from the two Sobel
//! responses. Multiclass maps are handled by summing the per-channel loss.

use crate::error::{Error, Result};
use crate::grid::{adjoint_scatter, correlate_valid, Grid2D, SOBEL_X, SOBEL_Y};

/// Per-pixel class-probability field, stored as one grid per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    channels: Vec<Grid2D>,
}

/// Tolerance on the per-pixel sum of class probabilities.
pub const PROB_SUM_TOL: f64 = 1e-6;

impl ProbMap {
    /// Validates that every pixel holds a distribution over the classes.
    pub fn new(channels: Vec<Grid2D>) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(Error::InvalidProbMap("no class channels".into()));
        };
        let (h, w) = (first.height(), first.width());
        if let Some(bad) = channels
            .iter()
            .find(|c| c.height() != h || c.width() != w)
        {
            return Err(Error::SizeMismatch {
                expected: format!("{h}x{w}"),
                actual: format!("{}x{}", bad.height(), bad.width()),
            });
        }
        for p in 0..h * w {
            let mut sum = 0.0;
            for ch in &channels {
                let v = ch.data()[p];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidProbMap(format!(
                        "value {v} at pixel {p} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidProbMap(format!(
                    "pixel {p} sums to {sum}"
                )));
            }
        }
        Ok(Self { channels })
    }

    /// Builds a map from per-pixel class vectors in row-major pixel order.
    pub fn from_pixels(height: usize, width: usize, num_classes: usize, values: &[f64]) -> Result<Self> {
        if values.len() != height * width * num_classes {
            return Err(Error::SizeMismatch {
                expected: format!("{} values", height * width * num_classes),
                actual: format!("{} values", values.len()),
            });
        }
        let channels = (0..num_classes)
            .map(|k| {
                let data = (0..height * width)
                    .map(|p| values[p * num_classes + k])
                    .collect();
                Grid2D::new(height, width, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(channels)
    }

    /// Every pixel holds the same distribution.
    pub fn uniform(height: usize, width: usize, num_classes: usize) -> Self {
        let v = 1.0 / num_classes as f64;
        Self {
            channels: vec![Grid2D::filled(height, width, v); num_classes],
        }
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn num_classes(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Grid2D] {
        &self.channels
    }

    pub fn channel(&self, k: usize) -> &Grid2D {
        &self.channels[k]
    }

    pub fn prob(&self, row: usize, col: usize, k: usize) -> f64 {
        self.channels[k].get(row, col)
    }

    pub fn pixel(&self, row: usize, col: usize) -> Vec<f64> {
        self.channels.iter().map(|c| c.get(row, col)).collect()
    }

    /// The per-class 3x3 neighborhoods around interior pixel `(row, col)`.
    pub fn neighborhood(&self, row: usize, col: usize) -> NeighborhoodOutputs {
        assert!(row >= 1 && col >= 1 && row + 1 < self.height() && col + 1 < self.width());
        NeighborhoodOutputs {
            channels: self
                .channels
                .iter()
                .map(|c| c.window3(row - 1, col - 1))
                .collect(),
        }
    }
}

/// Classifier outputs over a 3x3 neighborhood, nine row-major values per class.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodOutputs {
    pub channels: Vec<[f64; 9]>,
}

impl NeighborhoodOutputs {
    pub fn new(channels: Vec<[f64; 9]>) -> Result<Self> {
        for (c, vals) in channels.iter().enumerate() {
            if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    index: c * 9 + i,
                    value: vals[i],
                });
            }
        }
        Ok(Self { channels })
    }

    /// A single-channel neighborhood.
    pub fn single(values: [f64; 9]) -> Result<Self> {
        Self::new(vec![values])
    }

    pub fn num_classes(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, k: usize) -> Result<&[f64; 9]> {
        self.channels.get(k).ok_or(Error::ChannelOutOfRange {
            channel: k,
            num_classes: self.channels.len(),
        })
    }
}

/// A loss on one channel's 3x3 neighborhood together with its gradient.
///
/// `theta_coeffs(nb)[i]` is the (sub)derivative of `theta(nb)` with respect
/// to `nb[i]`. The trainer consumes only the coefficients.
pub trait SpatialLoss: Send + Sync {
    fn theta(&self, nb: &[f64; 9]) -> f64;
    fn theta_coeffs(&self, nb: &[f64; 9]) -> [f64; 9];
}

/// Anisotropic total variation `|Gx| + |Gy|` with Sobel derivatives.
#[derive(Debug, Clone, Copy, Default)]
pub struct TotalVariation;

/// Sign with `sign(0) = 0`.
#[inline]
pub fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl SpatialLoss for TotalVariation {
    fn theta(&self, nb: &[f64; 9]) -> f64 {
        SOBEL_X.apply(nb).abs() + SOBEL_Y.apply(nb).abs()
    }

    fn theta_coeffs(&self, nb: &[f64; 9]) -> [f64; 9] {
        let sx = sign0(SOBEL_X.apply(nb));
        let sy = sign0(SOBEL_Y.apply(nb));
        let mut out = [0.0; 9];
        for (i, o) in out.iter_mut().enumerate() {
            *o = sx * SOBEL_X.taps[i] + sy * SOBEL_Y.taps[i];
        }
        out
    }
}

/// Total variation of one channel of `nb`.
pub fn tv_theta(nb: &NeighborhoodOutputs, channel: usize) -> Result<f64> {
    Ok(TotalVariation.theta(nb.channel(channel)?))
}

/// Subgradient coefficients of [`tv_theta`] for one channel.
pub fn tv_theta_coeffs(nb: &NeighborhoodOutputs, channel: usize) -> Result<[f64; 9]> {
    Ok(TotalVariation.theta_coeffs(nb.channel(channel)?))
}

/// Summed total variation over all interior pixels and class channels.
pub fn tv_value_image(p: &ProbMap) -> Result<f64> {
    tv_value_channels(p.channels())
}

/// Per-channel subgradient of [`tv_value_image`] with respect to every pixel.
pub fn tv_grad_image(p: &ProbMap) -> Result<Vec<Grid2D>> {
    tv_grad_channels(p.channels())
}

/// [`tv_value_image`] on raw channels that need not form a distribution.
pub fn tv_value_channels(channels: &[Grid2D]) -> Result<f64> {
    let mut total = 0.0;
    for ch in channels {
        let gx = correlate_valid(ch, &SOBEL_X)?;
        let gy = correlate_valid(ch, &SOBEL_Y)?;
        total += gx.data().iter().map(|v| v.abs()).sum::<f64>();
        total += gy.data().iter().map(|v| v.abs()).sum::<f64>();
    }
    Ok(total)
}

/// [`tv_grad_image`] on raw channels.
pub fn tv_grad_channels(channels: &[Grid2D]) -> Result<Vec<Grid2D>> {
    channels
        .iter()
        .map(|ch| {
            let (h, w) = (ch.height(), ch.width());
            let sx = correlate_valid(ch, &SOBEL_X)?.map(sign0);
            let sy = correlate_valid(ch, &SOBEL_Y)?.map(sign0);
            let gx = adjoint_scatter(&sx, &SOBEL_X, h, w)?;
            let gy = adjoint_scatter(&sy, &SOBEL_Y, h, w)?;
            let data = gx.data().iter().zip(gy.data()).map(|(a, b)| a + b).collect();
            Grid2D::new(h, w, data)
        })
        .collect()
}
