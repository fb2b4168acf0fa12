//! Symmetric padding of frames onto a pyramid-friendly canvas.

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::pyramid::PyramidConfig;

/// Side length of the coarsest level on a padded canvas.
pub const COARSEST_SIDE: f64 = 8.0;

/// Smallest power of two that is at least `side` and leaves the coarsest
/// level at least [`COARSEST_SIDE`] pixels wide.
pub fn padded_side(side: usize, config: &PyramidConfig) -> usize {
    let needed = (COARSEST_SIDE * config.scale_factor.powi(config.levels as i32) - 1e-9).ceil();
    let target = (side as f64).max(needed) as usize;
    target.next_power_of_two()
}

/// Padded `(height, width)` for a frame of the given size.
pub fn canvas_size(height: usize, width: usize, config: &PyramidConfig) -> (usize, usize) {
    (padded_side(height, config), padded_side(width, config))
}

/// Largest level count whose canvas needs no more than the next power of two
/// of the smaller side.
pub fn auto_levels(height: usize, width: usize, scale_factor: f64) -> usize {
    let side = height.min(width).max(1).next_power_of_two() as f64;
    ((side / COARSEST_SIDE).ln() / scale_factor.ln() + 1e-9).floor().max(1.0) as usize
}

/// Placement of a frame on its canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Padding {
    /// Splits the extra rows and columns evenly, the odd one going to the
    /// bottom or right.
    pub fn centered(height: usize, width: usize, canvas: (usize, usize)) -> Result<Self> {
        if canvas.0 < height || canvas.1 < width {
            return Err(Error::InvalidConfig(format!(
                "canvas {canvas:?} is smaller than the {height}x{width} frame"
            )));
        }
        Ok(Padding {
            top: (canvas.0 - height) / 2,
            left: (canvas.1 - width) / 2,
            height,
            width,
        })
    }

    /// Mirror-pads `image` (edge samples repeated) onto a canvas.
    pub fn pad(&self, image: &Image, canvas: (usize, usize)) -> Result<Image> {
        let (h, w, c) = image.dims();
        if (h, w) != (self.height, self.width) {
            return Err(crate::error::shape_err((self.height, self.width), (h, w)));
        }
        let rows: Vec<usize> = (0..canvas.0).map(|y| reflect(y as isize - self.top as isize, h)).collect();
        let cols: Vec<usize> = (0..canvas.1).map(|x| reflect(x as isize - self.left as isize, w)).collect();
        Ok(Image::from_fn(canvas.0, canvas.1, c, |ch, y, x| image.get(ch, rows[y], cols[x])))
    }

    /// Cuts the original frame back out of a canvas.
    pub fn crop(&self, image: &Image) -> Result<Image> {
        image.crop(self.top, self.left, self.height, self.width)
    }
}

/// Half-sample symmetric index reflection into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}
