//! Image L1 loss, wrapped phase loss and their weighted sum.
//!
//! Both terms are means (per pixel for the image, per subband for phases) so
//! their magnitudes do not depend on the patch size. Subgradients at the
//! non-smooth points are zero.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::grid::{Grid, Image, RealGrid};
use crate::pyramid::Decomposition;

/// Weighting of the phase term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// ν in `L = L1 + ν · L_phase`.
    pub phase_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { phase_weight: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phase_weight >= 0.0 && self.phase_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "phase weight must be >= 0, got {}",
                self.phase_weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub image_term: f64,
    /// Phase term before weighting.
    pub phase_term: f64,
}

impl LossValue {
    pub fn combine(image_term: f64, phase_term: f64, config: &LossConfig) -> Self {
        LossValue {
            total: image_term + config.phase_weight * phase_term,
            image_term,
            phase_term,
        }
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute difference over all pixels and channels.
pub fn image_l1(predicted: &Image, target: &Image) -> Result<f64> {
    predicted.ensure_same_dims(target)?;
    Ok(l1_slices(predicted.as_slice(), target.as_slice()))
}

pub fn l1_slices(predicted: &[f64], target: &[f64]) -> f64 {
    let sum: f64 = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .sum();
    sum / predicted.len() as f64
}

/// Gradient of [`image_l1`] with respect to the prediction.
pub fn image_l1_grad(predicted: &[f64], target: &[f64]) -> Vec<f64> {
    let scale = 1.0 / predicted.len() as f64;
    predicted
        .iter()
        .zip(target)
        .map(|(p, t)| sign(p - t) * scale)
        .collect()
}

/// `atan2(sin d, cos d)` folded into `(-π, π]`.
#[inline]
pub fn wrapped_difference(phi: f64, phi_hat: f64) -> f64 {
    let d = phi - phi_hat;
    let w = d.sin().atan2(d.cos());
    if w <= -PI {
        PI
    } else {
        w
    }
}

/// Elementwise smaller angular difference `φ - φ̂`.
pub fn phase_diff(phi: &RealGrid, phi_hat: &RealGrid) -> Result<RealGrid> {
    phi_hat.ensure_shape(phi.shape())?;
    let data = phi
        .as_slice()
        .iter()
        .zip(phi_hat.as_slice())
        .map(|(&a, &b)| wrapped_difference(a, b))
        .collect();
    Grid::from_vec(phi.height(), phi.width(), data)
}

/// Mean absolute wrapped difference of one subband's phases and its
/// gradient with respect to the predicted phases.
pub fn subband_phase_term(predicted: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let scale = 1.0 / predicted.len() as f64;
    let mut sum = 0.0;
    let grad = predicted
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = wrapped_difference(t, p);
            sum += d.abs();
            // d(Δ)/d(φ̂) = -1 away from the wrap point
            -sign(d) * scale
        })
        .collect();
    (sum * scale, grad)
}

/// Sum over the selected oriented `levels` and all orientations of the mean
/// absolute wrapped phase difference.
pub fn phase_loss(predicted: &Decomposition, target: &Decomposition, levels: &[usize]) -> Result<f64> {
    if levels.is_empty() {
        return Err(Error::EmptyLevels);
    }
    let mut total = 0.0;
    for &level in levels {
        if level == 0 || level > predicted.levels() || level > target.levels() {
            return Err(shape_err(format!("level in 1..={}", target.levels()), level));
        }
        let (p_row, t_row) = (&predicted.bands[level - 1], &target.bands[level - 1]);
        if p_row.len() != t_row.len() {
            return Err(shape_err(t_row.len(), p_row.len()));
        }
        for (p, t) in p_row.iter().zip(t_row) {
            p.data.ensure_shape(t.data.shape())?;
            let (term, _) = subband_phase_term(p.phase().as_slice(), t.phase().as_slice());
            total += term;
        }
    }
    Ok(total)
}

/// `image_l1 + ν · phase_loss` with the individual terms.
pub fn total_loss(
    predicted_image: &Image,
    target_image: &Image,
    predicted: &Decomposition,
    target: &Decomposition,
    levels: &[usize],
    config: &LossConfig,
) -> Result<LossValue> {
    config.validate()?;
    let image_term = image_l1(predicted_image, target_image)?;
    let phase_term = phase_loss(predicted, target, levels)?;
    Ok(LossValue::combine(image_term, phase_term, config))
}
