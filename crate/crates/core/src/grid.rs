//! Dense 2-D scalar fields and 3x3 correlation primitives.
//!
//! Every filter in this crate uses cross-correlation: the kernel is laid over
//! the grid without flipping, so `out(r, c) = sum_i taps[i] * g(r + i / 3, c + i % 3)`.
//! Outputs are "valid" only: a 3x3 window must fit entirely inside the grid,
//! so an `H x W` input yields an `(H - 2) x (W - 2)` response.

use crate::error::{Error, Result};

/// Row-major `height x width` field of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid2D {
    /// Builds a grid, checking the length and that every entry is finite.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::DimensionTooSmall {
                height,
                width,
                min: 1,
            });
        }
        if data.len() != height * width {
            return Err(Error::SizeMismatch {
                expected: format!("{} values for {height}x{width}", height * width),
                actual: format!("{} values", data.len()),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        assert!(value.is_finite());
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Builds a grid by evaluating `f(row, col)` at every pixel.
    ///
    /// Panics if `f` returns a non-finite value.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data).expect("from_fn produced an invalid grid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(value.is_finite());
        self.data[row * self.width + col] = value;
    }

    /// The 3x3 window whose top-left corner is `(row, col)`, in row-major order.
    pub fn window3(&self, row: usize, col: usize) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.get(row + i / 3, col + i % 3);
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Frobenius inner product. Panics on a size mismatch.
    pub fn dot(&self, other: &Grid2D) -> f64 {
        assert_eq!(
            (self.height, self.width),
            (other.height, other.width),
            "dot of mismatched grids"
        );
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn require_min(&self, min: usize) -> Result<()> {
        if self.height < min || self.width < min {
            return Err(Error::DimensionTooSmall {
                height: self.height,
                width: self.width,
                min,
            });
        }
        Ok(())
    }
}

/// A stack of equally sized channels, e.g. the gray or RGB planes of an image
/// or of a classifier input patch.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    channels: Vec<Grid2D>,
}

impl ImageStack {
    pub fn new(channels: Vec<Grid2D>) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(Error::SizeMismatch {
                expected: "at least one channel".into(),
                actual: "none".into(),
            });
        };
        let (h, w) = (first.height, first.width);
        if let Some(bad) = channels.iter().find(|c| c.height != h || c.width != w) {
            return Err(Error::SizeMismatch {
                expected: format!("{h}x{w}"),
                actual: format!("{}x{}", bad.height, bad.width),
            });
        }
        Ok(Self { channels })
    }

    pub fn single(channel: Grid2D) -> Self {
        Self {
            channels: vec![channel],
        }
    }

    pub fn height(&self) -> usize {
        self.channels[0].height
    }

    pub fn width(&self) -> usize {
        self.channels[0].width
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Grid2D] {
        &self.channels
    }

    pub fn channel(&self, k: usize) -> &Grid2D {
        &self.channels[k]
    }

    /// Channel-major copy of all values.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.channels.len() * self.height() * self.width());
        for c in &self.channels {
            out.extend_from_slice(&c.data);
        }
        out
    }
}

/// Nine taps of a 3x3 filter in row-major order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel3x3 {
    pub taps: [f64; 9],
}

/// Row-direction derivative: responds to variation down the rows.
pub const SOBEL_X: Kernel3x3 = Kernel3x3 {
    taps: [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0],
};

/// Column-direction derivative: responds to variation across the columns.
pub const SOBEL_Y: Kernel3x3 = Kernel3x3 {
    taps: [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0],
};

impl Kernel3x3 {
    pub const fn new(taps: [f64; 9]) -> Self {
        Self { taps }
    }

    /// Inner product of the taps with a row-major 3x3 window.
    ///
    /// Evaluated as `sum_i taps[i] * (v[i] - v[4]) + v[4] * sum(taps)`, which
    /// is exactly zero on a constant window whenever the taps sum to zero.
    #[inline]
    pub fn apply(&self, window: &[f64; 9]) -> f64 {
        let center = window[4];
        let mut acc = 0.0;
        for (k, v) in self.taps.iter().zip(window) {
            acc += k * (v - center);
        }
        let sum = self.tap_sum();
        if sum != 0.0 {
            acc += center * sum;
        }
        acc
    }

    pub fn tap_sum(&self) -> f64 {
        self.taps.iter().sum()
    }
}

/// Valid-region cross-correlation of `grid` with `kernel`.
pub fn correlate_valid(grid: &Grid2D, kernel: &Kernel3x3) -> Result<Grid2D> {
    grid.require_min(3)?;
    let (oh, ow) = (grid.height - 2, grid.width - 2);
    let w = grid.width;
    let mut data = Vec::with_capacity(oh * ow);
    let mut window = [0.0; 9];
    for r in 0..oh {
        for c in 0..ow {
            for (i, v) in window.iter_mut().enumerate() {
                *v = grid.data[(r + i / 3) * w + c + i % 3];
            }
            data.push(kernel.apply(&window));
        }
    }
    Ok(Grid2D {
        height: oh,
        width: ow,
        data,
    })
}

pub fn sobel_x(grid: &Grid2D) -> Result<Grid2D> {
    correlate_valid(grid, &SOBEL_X)
}

pub fn sobel_y(grid: &Grid2D) -> Result<Grid2D> {
    correlate_valid(grid, &SOBEL_Y)
}

/// Adjoint of [`correlate_valid`].
///
/// Each coefficient at valid position `q` scatters `taps[i] * coeff(q)` onto
/// the `i`-th pixel of the window anchored at `q`, producing an
/// `out_h x out_w` field. Equivalent to a zero-padded full correlation of
/// `coeff` with the 180-degree-rotated kernel.
pub fn adjoint_scatter(
    coeff: &Grid2D,
    kernel: &Kernel3x3,
    out_h: usize,
    out_w: usize,
) -> Result<Grid2D> {
    if out_h < 3 || out_w < 3 || coeff.height != out_h - 2 || coeff.width != out_w - 2 {
        return Err(Error::SizeMismatch {
            expected: format!(
                "{}x{} coefficients for a {out_h}x{out_w} output",
                out_h.saturating_sub(2),
                out_w.saturating_sub(2)
            ),
            actual: format!("{}x{}", coeff.height, coeff.width),
        });
    }
    let mut data = vec![0.0; out_h * out_w];
    for r in 0..coeff.height {
        for c in 0..coeff.width {
            let q = coeff.data[r * coeff.width + c];
            if q == 0.0 {
                continue;
            }
            for (i, &tap) in kernel.taps.iter().enumerate() {
                data[(r + i / 3) * out_w + c + i % 3] += tap * q;
            }
        }
    }
    Ok(Grid2D {
        height: out_h,
        width: out_w,
        data,
    })
}
