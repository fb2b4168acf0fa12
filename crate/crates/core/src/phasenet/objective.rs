//! Training objective: remap, splice with ground truth, reconstruct, score,
//! and differentiate the whole chain.

use std::f64::consts::PI;

use crate::error::{shape_err, Error, Result};
use crate::grid::{Grid, RealGrid};
use crate::losses::{image_l1_grad, l1_slices, subband_phase_term, LossConfig, LossValue};
use crate::pyramid::{Decomposition, FilterBank};

use super::layers::Tensor;
use super::network::{backward, forward_train, ForwardTape};
use super::{mixing_weight, normalize_inputs, remap, NetworkInput, NetworkWeights, Params};

/// Decompositions of one training triple plus the network input built from
/// its outer frames.
#[derive(Debug, Clone)]
pub struct TripletDecomposition {
    pub r1: Decomposition,
    pub r2: Decomposition,
    pub target: Decomposition,
    pub target_image: RealGrid,
    pub input: NetworkInput,
}

impl TripletDecomposition {
    pub fn new(bank: &FilterBank, i1: &RealGrid, middle: &RealGrid, i2: &RealGrid) -> Result<Self> {
        let r1 = bank.decompose(i1)?;
        let r2 = bank.decompose(i2)?;
        let target = bank.decompose(middle)?;
        let input = normalize_inputs(&r1, &r2)?;
        Ok(TripletDecomposition {
            r1,
            r2,
            target,
            target_image: middle.clone(),
            input,
        })
    }
}

/// Replaces the first `trained` blocks' worth of `ground_truth` (low-pass
/// residual, then oriented levels coarsest first) by `predicted`.
fn splice(predicted: &Decomposition, ground_truth: &Decomposition, trained: usize) -> Decomposition {
    let mut out = ground_truth.clone();
    if trained >= 1 {
        out.lowpass = predicted.lowpass.clone();
    }
    for level in 1..trained.min(out.levels() + 1) {
        out.bands[level - 1] = predicted.bands[level - 1].clone();
    }
    out
}

/// Reconstructs the decomposition whose first `trained` blocks come from
/// `predicted` and the rest from `ground_truth`. The ground-truth high-pass
/// residual is used unless every level is predicted.
pub fn hybrid_reconstruct(
    predicted: &Decomposition,
    ground_truth: &Decomposition,
    trained: usize,
    bank: &FilterBank,
) -> Result<RealGrid> {
    let n = bank.levels();
    if trained > n + 1 {
        return Err(shape_err(format!("0..={} trained levels", n + 1), trained));
    }
    predicted.ensure_layout(bank)?;
    ground_truth.ensure_layout(bank)?;
    let spliced = splice(predicted, ground_truth, trained);
    bank.reconstruct(&spliced, trained <= n)
}

/// Batch-mean loss with optional gradients.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: LossValue,
    /// Gradients per parameter group.
    pub grads: Vec<Params>,
    /// Gradients with respect to the normalized network inputs.
    pub input_grads: Vec<Tensor>,
    pub tape: ForwardTape,
}

/// Mean total loss over `batch` when the first `trained` blocks are
/// predicted, and its exact gradient with respect to every parameter.
pub fn loss_and_gradients(
    weights: &NetworkWeights,
    batch: &[TripletDecomposition],
    bank: &FilterBank,
    trained: usize,
    config: &LossConfig,
) -> Result<BatchLoss> {
    evaluate(weights, batch, bank, trained, config, true)
}

/// Mean total loss without the reverse pass.
pub fn batch_loss(
    weights: &NetworkWeights,
    batch: &[TripletDecomposition],
    bank: &FilterBank,
    trained: usize,
    config: &LossConfig,
) -> Result<LossValue> {
    evaluate(weights, batch, bank, trained, config, false).map(|b| b.loss)
}

fn evaluate(
    weights: &NetworkWeights,
    batch: &[TripletDecomposition],
    bank: &FilterBank,
    trained: usize,
    config: &LossConfig,
    with_grads: bool,
) -> Result<BatchLoss> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyDataset("empty batch".into()));
    }
    if trained == 0 || trained > bank.levels() + 1 {
        return Err(shape_err(format!("1..={} trained levels", bank.levels() + 1), trained));
    }
    let inputs: Vec<NetworkInput> = batch.iter().map(|t| t.input.clone()).collect();
    let input = NetworkInput::stack(&inputs)?;
    let (raw, tape) = forward_train(weights, &input, trained)?;

    let b = bank.orientations();
    let scale = 1.0 / batch.len() as f64;
    let mut image_sum = 0.0;
    let mut phase_sum = 0.0;
    let mut grad_raw: Vec<Tensor> = raw
        .levels
        .iter()
        .map(|t| Tensor::zeros(t.n, t.c, t.h, t.w))
        .collect();

    for (i, item) in batch.iter().enumerate() {
        let raw_i = raw.sample(i);
        let predicted = remap(&raw_i, &item.r1, &item.r2)?;
        let image = hybrid_reconstruct(&predicted, &item.target, trained, bank)?;
        let pred_px = image.as_slice();
        let target_px = item.target_image.as_slice();
        image_sum += l1_slices(pred_px, target_px);

        let mut phase_grads: Vec<Vec<Vec<f64>>> = Vec::new();
        for level in 1..trained {
            let t = &raw_i.levels[level];
            let mut row = Vec::with_capacity(b);
            for o in 0..b {
                let phi_hat: Vec<f64> = t.plane(0, o).iter().map(|v| PI * v).collect();
                let target = item.target.band(level, o).phase();
                let (term, grad) = subband_phase_term(&phi_hat, target.as_slice());
                phase_sum += term;
                row.push(grad);
            }
            phase_grads.push(row);
        }
        if !with_grads {
            continue;
        }

        let (h, w) = image.shape();
        let d_image = Grid::from_vec(h, w, image_l1_grad(pred_px, target_px))?;
        let adj = bank.reconstruct_adjoint(&d_image)?;

        let g0 = grad_raw[0].sample_mut(i);
        for (k, g) in g0.iter_mut().enumerate() {
            let diff = item.r1.lowpass.as_slice()[k] - item.r2.lowpass.as_slice()[k];
            *g = scale * adj.lowpass.as_slice()[k] * 0.5 * diff;
        }
        for level in 1..trained {
            let t = &raw_i.levels[level];
            let plane = t.h * t.w;
            let dst = grad_raw[level].sample_mut(i);
            for o in 0..b {
                let a1 = item.r1.band(level, o).data.as_slice();
                let a2 = item.r2.band(level, o).data.as_slice();
                let g = adj.bands[level - 1][o].as_slice();
                let phase_raw = t.plane(0, o);
                let mix_raw = t.plane(0, b + o);
                let pg = &phase_grads[level - 1][o];
                for k in 0..plane {
                    let (m1, m2) = (a1[k].norm(), a2[k].norm());
                    let beta = mixing_weight(mix_raw[k]);
                    let amp = beta * m1 + (1.0 - beta) * m2;
                    let phi = PI * phase_raw[k];
                    let (s, c) = phi.sin_cos();
                    let d_amp = scale * (g[k].re * c + g[k].im * s);
                    let d_phi = scale * (amp * (g[k].im * c - g[k].re * s) + config.phase_weight * pg[k]);
                    dst[o * plane + k] = PI * d_phi;
                    dst[(b + o) * plane + k] = d_amp * 0.5 * (m1 - m2);
                }
            }
        }
    }

    let loss = LossValue::combine(image_sum * scale, phase_sum * scale, config);
    let (grads, input_grads) = if with_grads {
        let back = backward(weights, &tape, &grad_raw)?;
        (back.groups, back.inputs)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(BatchLoss {
        loss,
        grads,
        input_grads,
        tape,
    })
}
