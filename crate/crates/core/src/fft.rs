//! Two-dimensional DFT on row-major complex buffers.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned 2-D transform for one `height x width` grid.
///
/// `forward` is the unnormalized DFT; `inverse` divides by `height * width`.
#[derive(Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fft2({}x{})", self.height, self.width)
    }
}

impl Fft2 {
    pub fn new(planner: &mut FftPlanner<f64>, height: usize, width: usize) -> Self {
        Fft2 {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.height * self.width) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    fn run(&self, buf: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let (h, w) = (self.height, self.width);
        assert_eq!(buf.len(), h * w, "buffer does not match the planned shape");
        rows.process(buf);
        let mut t = vec![Complex64::default(); h * w];
        transpose(buf, &mut t, h, w);
        cols.process(&mut t);
        transpose(&t, buf, w, h);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], h: usize, w: usize) {
    for y in 0..h {
        for x in 0..w {
            dst[x * h + y] = src[y * w + x];
        }
    }
}

/// Signed frequency index of DFT bin `q` on an `n`-point grid.
#[inline]
pub fn signed_index(q: usize, n: usize) -> isize {
    if q <= (n - 1) / 2 {
        q as isize
    } else {
        q as isize - n as isize
    }
}
