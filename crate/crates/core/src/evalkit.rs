//! Frame-quality metrics and the leave-one-out protocol.
//!
//! Every interior frame of a sequence is synthesized from its two neighbours
//! and scored against the held-out original. Color frames are scored on luma
//! for SSIM and on all channels for PSNR.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::baseline::naive_interpolate_image;
use crate::canvas::{canvas_size, Padding};
use crate::error::{Error, Result};
use crate::grid::{Image, RealGrid};
use crate::phasenet::{interpolate, NetworkWeights};
use crate::pyramid::{FilterBank, PyramidConfig};

/// PSNR reported for identical frames.
pub const PSNR_CAP: f64 = 99.0;
/// Side of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`, capped at
/// [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    psnr_with_cap(a, b, PSNR_CAP)
}

/// [`psnr`] with an explicit cap for identical or near-identical frames.
pub fn psnr_with_cap(a: &Image, b: &Image, cap: f64) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let n = a.as_slice().len();
    if n == 0 {
        return Err(Error::InvalidConfig("cannot score an empty frame".into()));
    }
    let mse = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n as f64;
    if mse == 0.0 {
        return Ok(cap);
    }
    Ok((-10.0 * mse.log10()).min(cap))
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - center;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian filtering over fully covered windows only.
fn filter_valid(data: &[f64], height: usize, width: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (height - SSIM_WINDOW + 1, width - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; height * ow];
    for y in 0..height {
        let line = &data[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (k, t) in taps.iter().enumerate() {
            let src = &rows[(y + k) * ow..(y + k + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += t * v;
            }
        }
    }
    out
}

/// Mean structural similarity of two planes in `[0, 1]`.
pub fn ssim_plane(a: &RealGrid, b: &RealGrid) -> Result<f64> {
    b.ensure_shape(a.shape())?;
    let (h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::FrameTooSmall {
            height: h,
            width: w,
            patch: SSIM_WINDOW,
        });
    }
    let taps = gaussian_taps();
    let (x, y) = (a.as_slice(), b.as_slice());
    let prod = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<_>>();
    let mu_x = filter_valid(x, h, w, &taps);
    let mu_y = filter_valid(y, h, w, &taps);
    let xx = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &taps);
    let yy = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &taps);
    let xy = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sx = xx[i] - mx * mx;
            let sy = yy[i] - my * my;
            let sxy = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

/// SSIM on luma for color frames, on the single plane otherwise.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_dims(b)?;
    ssim_plane(&a.luma(), &b.luma())
}

/// Produces the frame halfway between two others.
pub trait Interpolator {
    fn name(&self) -> String;

    /// Synthesizes the frame at `position` in the sequence from its
    /// neighbours.
    fn interpolate(&self, first: &Image, last: &Image, position: usize) -> Result<Image>;
}

/// Pixelwise mean of the two neighbours.
#[derive(Debug, Clone, Copy, Default)]
pub struct Average;

impl Interpolator for Average {
    fn name(&self) -> String {
        "average".into()
    }

    fn interpolate(&self, first: &Image, last: &Image, _position: usize) -> Result<Image> {
        Image::average(first, last)
    }
}

/// Returns the held-out frame itself; scores the metric ceiling.
#[derive(Debug, Clone)]
pub struct Passthrough {
    pub frames: Vec<Image>,
}

impl Interpolator for Passthrough {
    fn name(&self) -> String {
        "passthrough".into()
    }

    fn interpolate(&self, _first: &Image, _last: &Image, position: usize) -> Result<Image> {
        self.frames.get(position).cloned().ok_or(Error::TooFewFrames(self.frames.len()))
    }
}

/// Filter banks reused across frames of equal size.
#[derive(Debug, Default)]
struct BankCache {
    cached: Mutex<Option<FilterBank>>,
}

impl BankCache {
    fn with<T>(&self, config: &PyramidConfig, canvas: (usize, usize), f: impl FnOnce(&FilterBank) -> Result<T>) -> Result<T> {
        let mut slot = self.cached.lock().unwrap_or_else(|e| e.into_inner());
        let stale = slot.as_ref().is_none_or(|b| b.finest() != canvas || b.config() != config);
        if stale {
            *slot = Some(FilterBank::new(config, canvas)?);
        }
        f(slot.as_ref().expect("bank was just built"))
    }
}

/// Pads both frames onto the canvas for `config`, applies `f`, and crops.
fn on_canvas(
    first: &Image,
    last: &Image,
    config: &PyramidConfig,
    cache: &BankCache,
    f: impl FnOnce(&Image, &Image, &FilterBank) -> Result<Image>,
) -> Result<Image> {
    first.ensure_same_dims(last)?;
    let (h, w, _) = first.dims();
    let canvas = canvas_size(h, w, config);
    let pad = Padding::centered(h, w, canvas)?;
    let (a, b) = (pad.pad(first, canvas)?, pad.pad(last, canvas)?);
    let out = cache.with(config, canvas, |bank| f(&a, &b, bank))?;
    pad.crop(&out)
}

/// Training-free phase midpoint interpolation.
#[derive(Debug, Default)]
pub struct PhaseBaseline {
    pub pyramid: PyramidConfig,
    cache: BankCache,
}

impl PhaseBaseline {
    pub fn new(pyramid: PyramidConfig) -> Self {
        PhaseBaseline {
            pyramid,
            cache: BankCache::default(),
        }
    }
}

impl Interpolator for PhaseBaseline {
    fn name(&self) -> String {
        "baseline".into()
    }

    fn interpolate(&self, first: &Image, last: &Image, _position: usize) -> Result<Image> {
        on_canvas(first, last, &self.pyramid, &self.cache, naive_interpolate_image)
    }
}

/// The learned decoder; weights are extended to the pyramid depth if needed.
#[derive(Debug)]
pub struct PhaseNetMethod {
    pub weights: NetworkWeights,
    pub pyramid: PyramidConfig,
    cache: BankCache,
}

impl PhaseNetMethod {
    pub fn new(weights: &NetworkWeights, pyramid: PyramidConfig) -> Result<Self> {
        if weights.arch.orientations != pyramid.orientations {
            return Err(Error::InvalidConfig(format!(
                "weights expect {} orientations, pyramid has {}",
                weights.arch.orientations, pyramid.orientations
            )));
        }
        let weights = if pyramid.levels > weights.levels() {
            weights.extend_for_resolution(pyramid.levels)?
        } else {
            weights.clone()
        };
        Ok(PhaseNetMethod {
            weights,
            pyramid,
            cache: BankCache::default(),
        })
    }
}

impl Interpolator for PhaseNetMethod {
    fn name(&self) -> String {
        "phasenet".into()
    }

    fn interpolate(&self, first: &Image, last: &Image, _position: usize) -> Result<Image> {
        on_canvas(first, last, &self.pyramid, &self.cache, |a, b, bank| {
            interpolate(a, b, &self.weights, bank)
        })
    }
}

/// Scores of one synthesized frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-frame and mean scores of one method on one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub sequence: String,
    pub frames: Vec<FrameScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    /// One JSON object per frame followed by a summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for f in &self.frames {
            let line = serde_json::json!({
                "method": self.method,
                "sequence": self.sequence,
                "frame": f.index,
                "psnr": f.psnr,
                "ssim": f.ssim,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "method": self.method,
            "sequence": self.sequence,
            "frames": self.frames.len(),
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

/// Summary table of several reports.
pub fn format_table(reports: &[MetricReport]) -> String {
    let mut out = format!("{:<16} {:<20} {:>7} {:>10} {:>8}\n", "method", "sequence", "frames", "psnr_db", "ssim");
    for r in reports {
        out.push_str(&format!(
            "{:<16} {:<20} {:>7} {:>10.3} {:>8.4}\n",
            r.method,
            r.sequence,
            r.frames.len(),
            r.mean_psnr,
            r.mean_ssim
        ));
    }
    out
}

/// Synthesizes every interior frame from its neighbours and scores it.
pub fn leave_one_out(frames: &[Image], method: &dyn Interpolator, sequence: &str) -> Result<MetricReport> {
    leave_one_out_with(frames, method, sequence, PSNR_CAP, &mut |_| {})
}

/// [`leave_one_out`] with an explicit PSNR cap and a callback after every
/// scored frame.
pub fn leave_one_out_with(
    frames: &[Image],
    method: &dyn Interpolator,
    sequence: &str,
    psnr_cap: f64,
    on_frame: &mut dyn FnMut(&FrameScore),
) -> Result<MetricReport> {
    if frames.len() < 3 {
        return Err(Error::TooFewFrames(frames.len()));
    }
    for f in &frames[1..] {
        frames[0].ensure_same_dims(f)?;
    }
    let mut scores = Vec::with_capacity(frames.len() - 2);
    for k in 1..frames.len() - 1 {
        let out = method.interpolate(&frames[k - 1], &frames[k + 1], k)?;
        let score = FrameScore {
            index: k,
            psnr: psnr_with_cap(&out, &frames[k], psnr_cap)?,
            ssim: ssim(&out, &frames[k])?,
        };
        on_frame(&score);
        scores.push(score);
    }
    let n = scores.len() as f64;
    Ok(MetricReport {
        method: method.name(),
        sequence: sequence.to_string(),
        mean_psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
        frames: scores,
    })
}
