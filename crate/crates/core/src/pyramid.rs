//! Complex steerable pyramid built in the frequency domain.
//!
//! Radial windows are raised cosines in `log_λ` of the radial frequency,
//! arranged as a cascade of low-pass / high-pass pairs so that their squared
//! magnitudes sum to one. Angular windows are `cos^(b-1)` lobes restricted to
//! a half-plane, which makes every oriented band analytic: its response is a
//! complex quadrature pair whose modulus is the local amplitude and whose
//! argument is the local phase. Reconstruction therefore adds twice the real
//! part of every oriented band.
//!
//! Each band is downsampled by cropping its spectrum to the level resolution.
//! Band supports are placed so they always fit inside their crop window,
//! which makes the crop lossless. Level resolutions follow
//! [`resolution_schedule`]; level `0` holds the low-pass residual and levels
//! `1..=n` the oriented bands from coarsest to finest.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::fft::{signed_index, Fft2};
use crate::grid::{ComplexGrid, Grid, RealGrid};

/// Geometry of the pyramid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PyramidConfig {
    /// Ratio between the resolutions of neighbouring levels (λ > 1).
    pub scale_factor: f64,
    /// Number of orientations per level (b).
    pub orientations: usize,
    /// Number of oriented levels (n).
    pub levels: usize,
    /// Width of the raised-cosine transitions in `log_λ` radial units.
    pub transition_width: f64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            scale_factor: std::f64::consts::SQRT_2,
            orientations: 4,
            levels: 10,
            transition_width: 1.0,
        }
    }
}

impl PyramidConfig {
    pub fn with_levels(levels: usize) -> Self {
        PyramidConfig {
            levels,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor.is_finite() && self.scale_factor > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "scale factor must be > 1, got {}",
                self.scale_factor
            )));
        }
        if self.orientations == 0 {
            return Err(Error::InvalidConfig("orientations must be >= 1".into()));
        }
        if self.levels == 0 {
            return Err(Error::InvalidConfig("levels must be >= 1".into()));
        }
        if !(self.transition_width.is_finite() && self.transition_width > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "transition width must be > 0, got {}",
                self.transition_width
            )));
        }
        Ok(())
    }
}

fn schedule_side(finest: usize, scale: f64, steps: usize) -> usize {
    if steps == 0 {
        return finest;
    }
    // Nearest even integer to finest / λ^steps.
    let exact = finest as f64 / scale.powi(steps as i32);
    2 * ((exact / 2.0).round() as usize)
}

/// Per-level resolutions `(height, width)` from the low-pass level `0` up to
/// the finest oriented level `n`.
///
/// The finest level keeps the input size. Every coarser side is the nearest
/// even integer to `finest / λ^k`, computed per side from the finest size.
/// For 256 pixels, λ = √2 and ten levels this yields
/// 8, 12, 16, 22, 32, 46, 64, 90, 128, 182, 256.
pub fn resolution_schedule(
    config: &PyramidConfig,
    finest: (usize, usize),
) -> Result<Vec<(usize, usize)>> {
    config.validate()?;
    let n = config.levels;
    let too_small = || Error::TooSmall {
        height: finest.0,
        width: finest.1,
        levels: n,
    };
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let h = schedule_side(finest.0, config.scale_factor, n - k);
        let w = schedule_side(finest.1, config.scale_factor, n - k);
        if h < 2 || w < 2 {
            return Err(too_small());
        }
        if let Some(&(ph, pw)) = out.last() {
            if h <= ph || w <= pw {
                return Err(too_small());
            }
        }
        out.push((h, w));
    }
    Ok(out)
}

/// One oriented complex band at its level's resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Subband {
    pub level: usize,
    pub orientation: usize,
    pub data: ComplexGrid,
}

impl Subband {
    pub fn amplitude(&self) -> RealGrid {
        amplitude(&self.data)
    }

    pub fn phase(&self) -> RealGrid {
        phase(&self.data)
    }
}

/// Elementwise modulus.
pub fn amplitude(band: &ComplexGrid) -> RealGrid {
    band.map(|z| z.norm())
}

/// Argument of `z` in `(-π, π]`; exact zero maps to `0`.
#[inline]
pub fn phase_of(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let p = z.im.atan2(z.re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

/// Elementwise argument in `(-π, π]`.
pub fn phase(band: &ComplexGrid) -> RealGrid {
    band.map(phase_of)
}

/// Oriented bands plus residuals of one single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// `bands[level - 1][orientation]` for levels `1..=n`, coarsest first.
    pub bands: Vec<Vec<Subband>>,
    /// Low-pass residual at the level-0 resolution.
    pub lowpass: RealGrid,
    /// High-pass residual at the finest resolution.
    pub highpass: RealGrid,
    pub config: PyramidConfig,
}

impl Decomposition {
    pub fn levels(&self) -> usize {
        self.bands.len()
    }

    pub fn band(&self, level: usize, orientation: usize) -> &Subband {
        &self.bands[level - 1][orientation]
    }

    pub fn band_mut(&mut self, level: usize, orientation: usize) -> &mut Subband {
        &mut self.bands[level - 1][orientation]
    }

    /// All-zero decomposition matching a filter bank's layout.
    pub fn zeros(bank: &FilterBank) -> Self {
        let schedule = bank.schedule();
        let bands = (1..=bank.levels())
            .map(|level| {
                let (h, w) = schedule[level];
                (0..bank.orientations())
                    .map(|orientation| Subband {
                        level,
                        orientation,
                        data: Grid::zeros(h, w),
                    })
                    .collect()
            })
            .collect();
        let (lh, lw) = schedule[0];
        let (fh, fw) = bank.finest();
        Decomposition {
            bands,
            lowpass: Grid::zeros(lh, lw),
            highpass: Grid::zeros(fh, fw),
            config: *bank.config(),
        }
    }

    /// Checks that every grid matches the bank's resolution schedule.
    pub fn ensure_layout(&self, bank: &FilterBank) -> Result<()> {
        let schedule = bank.schedule();
        if self.bands.len() != bank.levels() {
            return Err(shape_err(bank.levels(), self.bands.len()));
        }
        for (i, level) in self.bands.iter().enumerate() {
            if level.len() != bank.orientations() {
                return Err(shape_err(bank.orientations(), level.len()));
            }
            for band in level {
                band.data.ensure_shape(schedule[i + 1])?;
            }
        }
        self.lowpass.ensure_shape(schedule[0])?;
        self.highpass.ensure_shape(bank.finest())?;
        Ok(())
    }
}

/// Gradient of a scalar with respect to every coefficient of a decomposition.
///
/// For complex bands the real part holds the derivative with respect to the
/// real part of the coefficient and likewise for the imaginary part.
#[derive(Debug, Clone)]
pub struct DecompositionGrad {
    pub bands: Vec<Vec<ComplexGrid>>,
    pub lowpass: RealGrid,
    pub highpass: RealGrid,
}

#[inline]
fn raised_cosine_lowpass(rho: f64, cutoff: f64, width: f64) -> f64 {
    let x = (rho - (cutoff - 0.5 * width)) / width;
    if x <= 0.0 {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        (0.5 * PI * x).cos()
    }
}

#[inline]
fn raised_cosine_highpass(rho: f64, cutoff: f64, width: f64) -> f64 {
    let x = (rho - (cutoff - 0.5 * width)) / width;
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        (0.5 * PI * x).sin()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Radial and angular window definitions shared by mask construction and
/// the invariant checks.
#[derive(Debug, Clone)]
struct Windows {
    log_scale: f64,
    width: f64,
    /// Cutoffs `c_0 > c_1 > ... > c_n` in `log_λ(r / π)`; `c_0` bounds the
    /// high-pass residual, `c_n` the low-pass residual.
    cutoffs: Vec<f64>,
    orientations: usize,
    angular_gain: f64,
}

impl Windows {
    fn rho(&self, r: f64) -> f64 {
        if r <= 0.0 {
            f64::NEG_INFINITY
        } else {
            (r / PI).ln() / self.log_scale
        }
    }

    fn highpass(&self, r: f64) -> f64 {
        raised_cosine_highpass(self.rho(r), self.cutoffs[0], self.width)
    }

    fn lowpass(&self, r: f64) -> f64 {
        let rho = self.rho(r);
        self.cutoffs
            .iter()
            .map(|&c| raised_cosine_lowpass(rho, c, self.width))
            .product()
    }

    /// Radial window of the band with fine-to-coarse index `f` (0 = finest).
    fn band_radial(&self, f: usize, r: f64) -> f64 {
        let rho = self.rho(r);
        let low: f64 = self.cutoffs[..=f]
            .iter()
            .map(|&c| raised_cosine_lowpass(rho, c, self.width))
            .product();
        low * raised_cosine_highpass(rho, self.cutoffs[f + 1], self.width)
    }

    fn angular(&self, orientation: usize, theta: f64) -> f64 {
        let center = orientation as f64 * PI / self.orientations as f64;
        let mut d = (theta - center).rem_euclid(2.0 * PI);
        if d >= PI {
            d -= 2.0 * PI;
        }
        if (-0.5 * PI..0.5 * PI).contains(&d) {
            self.angular_gain * d.cos().powi(self.orientations as i32 - 1)
        } else {
            0.0
        }
    }
}

/// Frequency-domain masks for one image size and pyramid configuration.
///
/// Immutable after construction and safe to share between threads.
#[derive(Debug, Clone)]
pub struct FilterBank {
    config: PyramidConfig,
    schedule: Vec<(usize, usize)>,
    windows: Windows,
    highpass: Vec<f64>,
    lowpass: Vec<f64>,
    /// `bands[level - 1][orientation]`, each on the level's crop grid.
    bands: Vec<Vec<Vec<f64>>>,
    /// Per level: crop-grid position -> full-grid spectrum index.
    crop_index: Vec<Vec<usize>>,
    plans: Vec<Fft2>,
}

/// Builds the filter bank for `config` at the `finest` resolution.
pub fn build_filter_bank(config: &PyramidConfig, finest: (usize, usize)) -> Result<FilterBank> {
    FilterBank::new(config, finest)
}

impl FilterBank {
    pub fn new(config: &PyramidConfig, finest: (usize, usize)) -> Result<Self> {
        let schedule = resolution_schedule(config, finest)?;
        let n = config.levels;
        let log_scale = config.scale_factor.ln();
        let width = config.transition_width;
        let (fh, fw) = finest;

        // Largest radius that still lies inside the crop window of each level;
        // the band whose upper edge is tightest against it fixes c_0.
        let mut headroom = f64::INFINITY;
        for (level, &(h, w)) in schedule.iter().enumerate() {
            let fine_index = n - level;
            for (m, full) in [(h, fh), (w, fw)] {
                let fit = 2.0 * PI * m.div_ceil(2) as f64 / full as f64;
                let slack = (fit / PI).ln() / log_scale + fine_index as f64;
                headroom = headroom.min(slack);
            }
        }
        let c0 = headroom - 0.5 * width - 1e-9;
        let cutoffs: Vec<f64> = (0..=n).map(|j| c0 - j as f64).collect();
        let b = config.orientations;
        let angular_gain =
            (4f64.powi(b as i32 - 1) / (b as f64 * binomial(2 * (b - 1), b - 1))).sqrt();
        let windows = Windows {
            log_scale,
            width,
            cutoffs,
            orientations: b,
            angular_gain,
        };

        let mut planner = FftPlanner::new();
        let plans = schedule
            .iter()
            .map(|&(h, w)| Fft2::new(&mut planner, h, w))
            .collect();

        let crop_index: Vec<Vec<usize>> = schedule
            .iter()
            .map(|&(h, w)| {
                let mut idx = Vec::with_capacity(h * w);
                for qy in 0..h {
                    let ky = signed_index(qy, h).rem_euclid(fh as isize) as usize;
                    for qx in 0..w {
                        let kx = signed_index(qx, w).rem_euclid(fw as isize) as usize;
                        idx.push(ky * fw + kx);
                    }
                }
                idx
            })
            .collect();

        let highpass = frequency_map(finest, finest, |r, _| windows.highpass(r));
        let lowpass = frequency_map(schedule[0], finest, |r, _| windows.lowpass(r));
        let bands = (1..=n)
            .map(|level| {
                (0..b)
                    .map(|o| {
                        frequency_map(schedule[level], finest, |r, theta| {
                            windows.band_radial(n - level, r) * windows.angular(o, theta)
                        })
                    })
                    .collect()
            })
            .collect();

        Ok(FilterBank {
            config: *config,
            schedule,
            windows,
            highpass,
            lowpass,
            bands,
            crop_index,
            plans,
        })
    }

    pub fn config(&self) -> &PyramidConfig {
        &self.config
    }

    pub fn schedule(&self) -> &[(usize, usize)] {
        &self.schedule
    }

    pub fn finest(&self) -> (usize, usize) {
        *self.schedule.last().expect("schedule is never empty")
    }

    pub fn levels(&self) -> usize {
        self.config.levels
    }

    pub fn orientations(&self) -> usize {
        self.config.orientations
    }

    /// Mask of an oriented band on its level's crop grid (DFT order).
    pub fn band_mask(&self, level: usize, orientation: usize) -> &[f64] {
        &self.bands[level - 1][orientation]
    }

    pub fn lowpass_mask(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass_mask(&self) -> &[f64] {
        &self.highpass
    }

    /// Angular window of `orientation` at frequency-plane angle `theta`.
    pub fn angular_window(&self, orientation: usize, theta: f64) -> f64 {
        self.windows.angular(orientation, theta)
    }

    /// Radial window of oriented `level` at radial frequency `r` (rad/pixel).
    pub fn radial_window(&self, level: usize, r: f64) -> f64 {
        self.windows.band_radial(self.levels() - level, r)
    }

    /// Mask value of an oriented band at an arbitrary full-grid frequency.
    pub fn band_response(&self, level: usize, orientation: usize, wy: f64, wx: f64) -> f64 {
        let r = wy.hypot(wx);
        self.radial_window(level, r) * self.windows.angular(orientation, wy.atan2(wx))
    }

    /// Maximum deviation from one of the summed squared system responses
    /// over every full-grid frequency sample. Oriented bands count at `ω`
    /// and `-ω`, which is where the factor two of the real-part
    /// reconstruction goes.
    pub fn tiling_residual(&self) -> f64 {
        let (fh, fw) = self.finest();
        let mut total: Vec<f64> = self.highpass.iter().map(|h| h * h).collect();
        for (&i, l) in self.crop_index[0].iter().zip(&self.lowpass) {
            total[i] += l * l;
        }
        for level in 1..=self.levels() {
            for mask in &self.bands[level - 1] {
                for (&i, m) in self.crop_index[level].iter().zip(mask) {
                    let (ky, kx) = (i / fw, i % fw);
                    let neg = ((fh - ky) % fh) * fw + (fw - kx) % fw;
                    total[i] += m * m;
                    total[neg] += m * m;
                }
            }
        }
        total.iter().fold(0.0f64, |acc, t| acc.max((1.0 - t).abs()))
    }

    /// True when every band vanishes outside its level's symmetric crop
    /// window, so cropping its spectrum discards nothing.
    pub fn supports_fit_crops(&self) -> bool {
        let (fh, fw) = self.finest();
        let inside = |k: isize, m: usize| k.unsigned_abs() <= (m - 1) / 2;
        let check = |level: usize, f: &dyn Fn(f64, f64) -> f64| -> bool {
            let (mh, mw) = self.schedule[level];
            for qy in 0..fh {
                let ky = signed_index(qy, fh);
                let wy = 2.0 * PI * ky as f64 / fh as f64;
                for qx in 0..fw {
                    let kx = signed_index(qx, fw);
                    let wx = 2.0 * PI * kx as f64 / fw as f64;
                    if f(wy, wx) != 0.0 && !(inside(ky, mh) && inside(kx, mw)) {
                        return false;
                    }
                }
            }
            true
        };
        if !check(0, &|wy, wx| self.windows.lowpass(wy.hypot(wx))) {
            return false;
        }
        (1..=self.levels()).all(|level| {
            (0..self.orientations())
                .all(|o| check(level, &|wy, wx| self.band_response(level, o, wy, wx)))
        })
    }

    fn spectrum(&self, image: &RealGrid) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = image
            .as_slice()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.plans[self.levels()].forward(&mut buf);
        buf
    }

    /// Crops `spectrum * mask` to `level`'s grid and inverts it there.
    fn extract(&self, level: usize, spectrum: &[Complex64], mask: &[f64], gain: f64) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = self.crop_index[level]
            .iter()
            .zip(mask)
            .map(|(&i, &m)| spectrum[i] * (m * gain))
            .collect();
        self.plans[level].inverse(&mut buf);
        buf
    }

    fn level_gain(&self, level: usize) -> f64 {
        let (h, w) = self.schedule[level];
        let (fh, fw) = self.finest();
        (h * w) as f64 / (fh * fw) as f64
    }

    /// Splits a single-channel image into oriented bands and residuals.
    ///
    /// Band coefficients are samples of the full-resolution analytic
    /// response, so amplitudes are comparable across levels.
    pub fn decompose(&self, image: &RealGrid) -> Result<Decomposition> {
        image.ensure_shape(self.finest())?;
        let (fh, fw) = self.finest();
        let n = self.levels();
        let spectrum = self.spectrum(image);

        let hp = self.extract(n, &spectrum, &self.highpass, 1.0);
        let highpass = Grid::from_vec(fh, fw, hp.iter().map(|z| z.re).collect())?;

        let mut bands = Vec::with_capacity(n);
        for level in 1..=n {
            let (h, w) = self.schedule[level];
            let gain = self.level_gain(level);
            let mut row = Vec::with_capacity(self.orientations());
            for (orientation, mask) in self.bands[level - 1].iter().enumerate() {
                let data = self.extract(level, &spectrum, mask, gain);
                row.push(Subband {
                    level,
                    orientation,
                    data: Grid::from_vec(h, w, data)?,
                });
            }
            bands.push(row);
        }

        let (lh, lw) = self.schedule[0];
        let lp = self.extract(0, &spectrum, &self.lowpass, self.level_gain(0));
        let lowpass = Grid::from_vec(lh, lw, lp.iter().map(|z| z.re).collect())?;

        Ok(Decomposition {
            bands,
            lowpass,
            highpass,
            config: self.config,
        })
    }

    /// Inverse of [`FilterBank::decompose`]. The result is not clamped.
    pub fn reconstruct(&self, dec: &Decomposition, include_high_pass: bool) -> Result<RealGrid> {
        dec.ensure_layout(self)?;
        let (fh, fw) = self.finest();
        let n = self.levels();
        let mut total = vec![Complex64::default(); fh * fw];

        for level in 1..=n {
            let gain = 2.0 / self.level_gain(level);
            for (band, mask) in dec.bands[level - 1].iter().zip(&self.bands[level - 1]) {
                let mut buf = band.data.as_slice().to_vec();
                self.plans[level].forward(&mut buf);
                for ((&i, &m), z) in self.crop_index[level].iter().zip(mask).zip(&buf) {
                    total[i] += z * (m * gain);
                }
            }
        }

        let mut buf: Vec<Complex64> = dec
            .lowpass
            .as_slice()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.plans[0].forward(&mut buf);
        let gain = 1.0 / self.level_gain(0);
        for ((&i, &m), z) in self.crop_index[0].iter().zip(&self.lowpass).zip(&buf) {
            total[i] += z * (m * gain);
        }

        if include_high_pass {
            let hp = self.spectrum(&dec.highpass);
            for ((t, &m), z) in total.iter_mut().zip(&self.highpass).zip(&hp) {
                *t += z * m;
            }
        }

        self.plans[n].inverse(&mut total);
        Grid::from_vec(fh, fw, total.iter().map(|z| z.re).collect())
    }

    /// Adjoint of [`FilterBank::reconstruct`] (with the high-pass included):
    /// maps `dL/d(image)` to `dL/d(coefficients)`.
    pub fn reconstruct_adjoint(&self, grad: &RealGrid) -> Result<DecompositionGrad> {
        grad.ensure_shape(self.finest())?;
        let (fh, fw) = self.finest();
        let n = self.levels();
        let spectrum = self.spectrum(grad);

        let bands = (1..=n)
            .map(|level| {
                let (h, w) = self.schedule[level];
                self.bands[level - 1]
                    .iter()
                    .map(|mask| {
                        let data = self.extract(level, &spectrum, mask, 2.0);
                        Grid::from_vec(h, w, data).expect("level shape")
                    })
                    .collect()
            })
            .collect();

        let (lh, lw) = self.schedule[0];
        let lp = self.extract(0, &spectrum, &self.lowpass, 1.0);
        let hp = self.extract(n, &spectrum, &self.highpass, 1.0);
        Ok(DecompositionGrad {
            bands,
            lowpass: Grid::from_vec(lh, lw, lp.iter().map(|z| z.re).collect())?,
            highpass: Grid::from_vec(fh, fw, hp.iter().map(|z| z.re).collect())?,
        })
    }
}

/// Evaluates `f(r, θ)` on the DFT-ordered crop grid `shape` of a `finest`
/// spectrum, with frequencies in radians per full-resolution pixel.
fn frequency_map(
    shape: (usize, usize),
    finest: (usize, usize),
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let (h, w) = shape;
    let (fh, fw) = finest;
    let mut out = Vec::with_capacity(h * w);
    for qy in 0..h {
        let wy = 2.0 * PI * signed_index(qy, h) as f64 / fh as f64;
        for qx in 0..w {
            let wx = 2.0 * PI * signed_index(qx, w) as f64 / fw as f64;
            out.push(f(wy.hypot(wx), wy.atan2(wx)));
        }
    }
    out
}

/// Relative L2 error `||a - b|| / ||b||`.
pub fn relative_l2(a: &RealGrid, b: &RealGrid) -> f64 {
    let num: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let den: f64 = b.as_slice().iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}
