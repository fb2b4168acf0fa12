//! Training-free interpolation by per-coefficient phase midpoints.
//!
//! Each subband takes the angular midpoint of the two input phases along the
//! shorter arc, with averaged amplitudes and low-pass residuals. Motion larger
//! than half a subband wavelength wraps and produces ghosting.

use num_complex::Complex64;

use crate::error::{shape_err, Result};
use crate::grid::{Grid, Image, RealGrid};
use crate::losses::wrapped_difference;
use crate::pyramid::{phase_of, Decomposition, FilterBank};

/// Wraps an angle into `(-π, π]`.
pub fn wrap(angle: f64) -> f64 {
    phase_of(Complex64::from_polar(1.0, angle))
}

/// Midpoint of `phi1` and `phi2` along the shorter arc, in `(-π, π]`. A tie at
/// exactly `π` apart moves forward from `phi1`.
pub fn phase_midpoint(phi1: f64, phi2: f64) -> f64 {
    wrap(phi1 + 0.5 * wrapped_difference(phi2, phi1))
}

/// The midpoint decomposition of `r1` and `r2` with a zero high-pass.
pub fn naive_phase_decomposition(r1: &Decomposition, r2: &Decomposition) -> Result<Decomposition> {
    if r1.levels() != r2.levels() {
        return Err(shape_err(r1.levels(), r2.levels()));
    }
    r2.lowpass.ensure_shape(r1.lowpass.shape())?;
    let mut out = r1.clone();
    for (row_out, row2) in out.bands.iter_mut().zip(&r2.bands) {
        if row_out.len() != row2.len() {
            return Err(shape_err(row_out.len(), row2.len()));
        }
        for (band, b2) in row_out.iter_mut().zip(row2) {
            b2.data.ensure_shape(band.data.shape())?;
            for (z, &z2) in band.data.as_mut_slice().iter_mut().zip(b2.data.as_slice()) {
                let amp = 0.5 * (z.norm() + z2.norm());
                *z = Complex64::from_polar(amp, phase_midpoint(phase_of(*z), phase_of(z2)));
            }
        }
    }
    for (a, b) in out.lowpass.as_mut_slice().iter_mut().zip(r2.lowpass.as_slice()) {
        *a = 0.5 * (*a + b);
    }
    out.highpass = Grid::zeros(r1.highpass.height(), r1.highpass.width());
    Ok(out)
}

/// Reconstruction of the midpoint decomposition (not clamped).
pub fn naive_phase_interpolate(r1: &Decomposition, r2: &Decomposition, bank: &FilterBank) -> Result<RealGrid> {
    bank.reconstruct(&naive_phase_decomposition(r1, r2)?, false)
}

/// Applies the baseline to every channel of two frames and clamps to `[0, 1]`.
pub fn naive_interpolate_image(i1: &Image, i2: &Image, bank: &FilterBank) -> Result<Image> {
    i1.ensure_same_dims(i2)?;
    let planes = (0..i1.channels())
        .map(|c| {
            let r1 = bank.decompose(&i1.channel(c))?;
            let r2 = bank.decompose(&i2.channel(c))?;
            Ok(naive_phase_interpolate(&r1, &r2, bank)?.map(|v| v.clamp(0.0, 1.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    Image::from_channels(&planes)
}
