//! Block-by-block forward passes and the reverse pass.

use crate::error::{shape_err, Result};

use super::layers::{
    concat_channels, conv_backward, conv_forward, conv_rows, leaky, norm_apply_eval, norm_backward_train,
    norm_forward_train, resize_backward, resize_forward, resize_rows, split_channels, ConvShape, NormCache, Taps,
    Tensor,
};
use super::{
    ArchConfig, BlockWeights, NetworkInput, NetworkWeights, Params, RawPrediction, CONV1_B, CONV1_W, CONV2_B,
    CONV2_W, NORM1_O, NORM1_S, NORM2_O, NORM2_S, PRED_B, PRED_W,
};

/// Normalization behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics.
    Train,
    /// Stored running statistics.
    Eval,
}

/// Pixels per strip in the streaming inference pass.
const STRIP_PIXELS: usize = 32 * 1024;

fn conv1_shape(w: &BlockWeights) -> ConvShape {
    ConvShape {
        in_channels: w.in_channels,
        out_channels: w.width,
        kernel: w.kernel,
    }
}

fn conv2_shape(w: &BlockWeights) -> ConvShape {
    ConvShape {
        in_channels: w.width,
        out_channels: w.width,
        kernel: w.kernel,
    }
}

fn pred_shape(w: &BlockWeights) -> ConvShape {
    ConvShape {
        in_channels: w.width,
        out_channels: w.pred_channels,
        kernel: 1,
    }
}

fn check_input(weights: &NetworkWeights, input: &NetworkInput, blocks: usize) -> Result<()> {
    if blocks == 0 || blocks > weights.blocks() || input.levels.len() < blocks {
        return Err(shape_err(
            format!("1..={} input levels", weights.blocks()),
            input.levels.len(),
        ));
    }
    let n = input.batch();
    for (k, t) in input.levels.iter().take(blocks).enumerate() {
        let expected = weights.arch.level_channels(k);
        if t.c != expected || t.n != n {
            return Err(shape_err((n, expected), (t.n, t.c)));
        }
    }
    Ok(())
}

/// Activations of one block recorded for the reverse pass.
#[derive(Debug, Clone)]
struct BlockTape {
    input: Tensor,
    norm1: NormCache,
    pre1: Tensor,
    act1: Tensor,
    norm2: NormCache,
    pre2: Tensor,
    features: Tensor,
    pred: Tensor,
    prev_hw: Option<(usize, usize)>,
}

/// Everything a training-mode forward pass records.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    blocks: Vec<BlockTape>,
}

impl ForwardTape {
    pub fn blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Folds the recorded batch statistics into the running averages, one
    /// block position at a time.
    pub fn update_running_stats(&self, weights: &mut NetworkWeights) {
        let m = weights.arch.norm_momentum;
        for (b, tape) in self.blocks.iter().enumerate() {
            let g = weights.block_groups[b];
            let r = &mut weights.groups[g].running;
            let blend = |run: &mut [f64], batch: &[f64]| {
                for (r, v) in run.iter_mut().zip(batch) {
                    *r = m * *r + (1.0 - m) * v;
                }
            };
            blend(&mut r.mean1, &tape.norm1.batch_mean);
            blend(&mut r.var1, &tape.norm1.batch_var);
            blend(&mut r.mean2, &tape.norm2.batch_mean);
            blend(&mut r.var2, &tape.norm2.batch_var);
        }
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_vec(t.n, t.c, t.h, t.w, t.data.iter().map(|&v| f(v)).collect())
}

fn block_train(
    w: &BlockWeights,
    arch: &ArchConfig,
    prev: Option<(&Tensor, &Tensor)>,
    level: &Tensor,
) -> BlockTape {
    let (input, prev_hw) = match prev {
        None => (level.clone(), None),
        Some((features, pred)) => {
            let f = resize_forward(features, level.h, level.w);
            let p = resize_forward(pred, level.h, level.w);
            (concat_channels(&[&f, &p, level]), Some((features.h, features.w)))
        }
    };
    let p = &w.params.0;
    let c1 = conv_forward(conv1_shape(w), &p[CONV1_W], &p[CONV1_B], &input);
    let (pre1, norm1) = norm_forward_train(&c1, &p[NORM1_S], &p[NORM1_O], arch.norm_eps);
    drop(c1);
    let act1 = map(&pre1, |v| leaky(v, arch.leaky_slope));
    let c2 = conv_forward(conv2_shape(w), &p[CONV2_W], &p[CONV2_B], &act1);
    let (pre2, norm2) = norm_forward_train(&c2, &p[NORM2_S], &p[NORM2_O], arch.norm_eps);
    drop(c2);
    let features = map(&pre2, |v| leaky(v, arch.leaky_slope));
    let logits = conv_forward(pred_shape(w), &p[PRED_W], &p[PRED_B], &features);
    let pred = map(&logits, f64::tanh);
    BlockTape {
        input,
        norm1,
        pre1,
        act1,
        norm2,
        pre2,
        features,
        pred,
        prev_hw,
    }
}

/// Training-mode forward through the first `blocks` blocks. Pure: running
/// statistics are left untouched (see [`ForwardTape::update_running_stats`]).
pub fn forward_train(
    weights: &NetworkWeights,
    input: &NetworkInput,
    blocks: usize,
) -> Result<(RawPrediction, ForwardTape)> {
    check_input(weights, input, blocks)?;
    let mut tapes: Vec<BlockTape> = Vec::with_capacity(blocks);
    for (k, level) in input.levels.iter().take(blocks).enumerate() {
        let prev = tapes.last().map(|t| (&t.features, &t.pred));
        let tape = block_train(weights.block(k), &weights.arch, prev, level);
        tapes.push(tape);
    }
    let raw = RawPrediction {
        levels: tapes.iter().map(|t| t.pred.clone()).collect(),
    };
    Ok((raw, ForwardTape { blocks: tapes }))
}

/// Gradients produced by [`backward`].
#[derive(Debug, Clone)]
pub struct Backward {
    /// Per parameter group, accumulated over every block using it.
    pub groups: Vec<Params>,
    /// Per input level, for the blocks that ran.
    pub inputs: Vec<Tensor>,
}

fn leaky_grad(grad: &mut Tensor, pre: &Tensor, slope: f64) {
    for (g, &p) in grad.data.iter_mut().zip(&pre.data) {
        if p <= 0.0 {
            *g *= slope;
        }
    }
}

/// Reverse pass from `dL/d(raw prediction)` of every recorded block.
pub fn backward(weights: &NetworkWeights, tape: &ForwardTape, grad_raw: &[Tensor]) -> Result<Backward> {
    if grad_raw.len() != tape.blocks.len() {
        return Err(shape_err(tape.blocks.len(), grad_raw.len()));
    }
    let slope = weights.arch.leaky_slope;
    let mut groups: Vec<Params> = weights.groups.iter().map(|g| g.params.zeros_like()).collect();
    let mut inputs: Vec<Option<Tensor>> = vec![None; tape.blocks.len()];
    // gradients flowing into a block's features and prediction from the block above
    let mut from_above: Option<(Tensor, Tensor)> = None;

    for k in (0..tape.blocks.len()).rev() {
        let t = &tape.blocks[k];
        let w = weights.block(k);
        let p = &w.params.0;
        let g = &mut groups[weights.block_groups[k]].0;

        if grad_raw[k].shape() != t.pred.shape() {
            return Err(shape_err(t.pred.shape(), grad_raw[k].shape()));
        }
        let mut d_pred = grad_raw[k].clone();
        let mut d_features = Tensor::zeros(t.features.n, t.features.c, t.features.h, t.features.w);
        if let Some((df, dp)) = from_above.take() {
            d_features = df;
            for (a, b) in d_pred.data.iter_mut().zip(&dp.data) {
                *a += b;
            }
        }
        for (d, &y) in d_pred.data.iter_mut().zip(&t.pred.data) {
            *d *= 1.0 - y * y;
        }
        let (gw, rest) = g.split_at_mut(PRED_B);
        let d_feat_head = conv_backward(
            pred_shape(w),
            &p[PRED_W],
            &t.features,
            &d_pred,
            &mut gw[PRED_W],
            &mut rest[0],
            true,
        )
        .expect("input gradient requested");
        for (a, b) in d_features.data.iter_mut().zip(&d_feat_head.data) {
            *a += b;
        }

        leaky_grad(&mut d_features, &t.pre2, slope);
        let d_c2 = {
            let (a, b) = g.split_at_mut(NORM2_O);
            norm_backward_train(&t.norm2, &p[NORM2_S], &d_features, &mut a[NORM2_S], &mut b[0])
        };
        let mut d_act1 = {
            let (a, b) = g.split_at_mut(CONV2_B);
            conv_backward(conv2_shape(w), &p[CONV2_W], &t.act1, &d_c2, &mut a[CONV2_W], &mut b[0], true)
                .expect("input gradient requested")
        };
        leaky_grad(&mut d_act1, &t.pre1, slope);
        let d_c1 = {
            let (a, b) = g.split_at_mut(NORM1_O);
            norm_backward_train(&t.norm1, &p[NORM1_S], &d_act1, &mut a[NORM1_S], &mut b[0])
        };
        let d_input = {
            let (a, b) = g.split_at_mut(CONV1_B);
            conv_backward(conv1_shape(w), &p[CONV1_W], &t.input, &d_c1, &mut a[CONV1_W], &mut b[0], true)
                .expect("input gradient requested")
        };

        match t.prev_hw {
            None => inputs[k] = Some(d_input),
            Some((ph, pw)) => {
                let prev_pred = tape.blocks[k - 1].pred.c;
                let level_c = d_input.c - w.width - prev_pred;
                let mut parts = split_channels(&d_input, &[w.width, prev_pred, level_c]).into_iter();
                let d_up_f = parts.next().expect("three parts");
                let d_up_p = parts.next().expect("three parts");
                inputs[k] = parts.next();
                from_above = Some((resize_backward(&d_up_f, ph, pw), resize_backward(&d_up_p, ph, pw)));
            }
        }
    }
    Ok(Backward {
        groups,
        inputs: inputs.into_iter().map(|t| t.expect("every block visited")).collect(),
    })
}

/// Output of one block of the streaming pass for one sample.
struct EvalLevel {
    features: Option<Vec<f64>>,
    pred: Vec<f64>,
    h: usize,
    w: usize,
}

/// Inference-mode forward. Each sample and level is processed in row strips
/// so memory stays bounded on large canvases.
pub fn forward_eval(weights: &NetworkWeights, input: &NetworkInput) -> Result<RawPrediction> {
    forward_eval_strips(weights, input, STRIP_PIXELS)
}

pub fn forward_eval_strips(
    weights: &NetworkWeights,
    input: &NetworkInput,
    strip_pixels: usize,
) -> Result<RawPrediction> {
    let blocks = input.levels.len();
    if blocks < weights.arch.blocks() {
        return Err(shape_err(weights.arch.blocks(), blocks));
    }
    check_input(weights, input, blocks)?;
    let n = input.batch();
    let mut out: Vec<Tensor> = input
        .levels
        .iter()
        .enumerate()
        .map(|(k, t)| Tensor::zeros(n, weights.block(k).pred_channels, t.h, t.w))
        .collect();
    for i in 0..n {
        let mut prev: Option<EvalLevel> = None;
        for (k, level) in input.levels.iter().enumerate() {
            let keep_features = k + 1 < blocks;
            let cur = eval_block(weights, k, prev.as_ref(), level, i, keep_features, strip_pixels);
            out[k].sample_mut(i).copy_from_slice(&cur.pred);
            prev = Some(cur);
        }
    }
    Ok(RawPrediction { levels: out })
}

fn eval_block(
    weights: &NetworkWeights,
    k: usize,
    prev: Option<&EvalLevel>,
    level: &Tensor,
    sample: usize,
    keep_features: bool,
    strip_pixels: usize,
) -> EvalLevel {
    let arch = &weights.arch;
    let w = weights.block(k);
    let p = &w.params.0;
    let r = &w.running;
    let (h, wd) = (level.h, level.w);
    let pad = w.kernel / 2;
    let x = level.sample(sample);
    let taps = prev.map(|pv| (Taps::new(pv.h, h), Taps::new(pv.w, wd)));
    let mut features = keep_features.then(|| vec![0.0; w.width * h * wd]);
    let mut pred = vec![0.0; w.pred_channels * h * wd];

    let strip = (strip_pixels / wd).max(1);
    let mut y0 = 0;
    while y0 < h {
        let y1 = (y0 + strip).min(h);
        let a1 = y0.saturating_sub(pad);
        let b1 = (y1 + pad).min(h);
        let a = a1.saturating_sub(pad);
        let b = (b1 + pad).min(h);
        let rows_in = b - a;

        // concatenated block input for rows a..b
        let mut cat = vec![0.0; w.in_channels * rows_in * wd];
        let mut offset = 0;
        if let (Some(pv), Some((ty, tx))) = (prev, taps.as_ref()) {
            let span = ty.source_span(&(a..b));
            let prev_features = pv.features.as_ref().expect("features kept for the next block");
            for (src, channels) in [(prev_features, w.width), (&pv.pred, pv.pred.len() / (pv.h * pv.w))] {
                for c in 0..channels {
                    let plane = &src[c * pv.h * pv.w..(c + 1) * pv.h * pv.w];
                    let window = &plane[span.start * pv.w..span.end * pv.w];
                    let dst = &mut cat[offset..offset + rows_in * wd];
                    resize_rows(ty, tx, window, span.start, pv.w, a..b, dst);
                    offset += rows_in * wd;
                }
            }
        }
        for c in 0..level.c {
            let plane = &x[c * h * wd..(c + 1) * h * wd];
            cat[offset..offset + rows_in * wd].copy_from_slice(&plane[a * wd..b * wd]);
            offset += rows_in * wd;
        }
        debug_assert_eq!(offset, cat.len());

        let mut act1 = vec![0.0; w.width * (b1 - a1) * wd];
        conv_rows(conv1_shape(w), &p[CONV1_W], &p[CONV1_B], &cat, a, rows_in, h, wd, a1..b1, &mut act1);
        drop(cat);
        let px1 = (b1 - a1) * wd;
        norm_apply_eval(&mut act1, px1, &p[NORM1_S], &p[NORM1_O], &r.mean1, &r.var1, arch.norm_eps);
        act1.iter_mut().for_each(|v| *v = leaky(*v, arch.leaky_slope));

        let px = (y1 - y0) * wd;
        let mut act2 = vec![0.0; w.width * px];
        conv_rows(conv2_shape(w), &p[CONV2_W], &p[CONV2_B], &act1, a1, b1 - a1, h, wd, y0..y1, &mut act2);
        drop(act1);
        norm_apply_eval(&mut act2, px, &p[NORM2_S], &p[NORM2_O], &r.mean2, &r.var2, arch.norm_eps);
        act2.iter_mut().for_each(|v| *v = leaky(*v, arch.leaky_slope));

        let mut logits = vec![0.0; w.pred_channels * px];
        conv_rows(pred_shape(w), &p[PRED_W], &p[PRED_B], &act2, y0, y1 - y0, h, wd, y0..y1, &mut logits);
        for c in 0..w.pred_channels {
            let dst = &mut pred[c * h * wd + y0 * wd..c * h * wd + y1 * wd];
            for (d, s) in dst.iter_mut().zip(&logits[c * px..(c + 1) * px]) {
                *d = s.tanh();
            }
        }
        if let Some(f) = features.as_mut() {
            for c in 0..w.width {
                f[c * h * wd + y0 * wd..c * h * wd + y1 * wd].copy_from_slice(&act2[c * px..(c + 1) * px]);
            }
        }
        y0 = y1;
    }
    EvalLevel {
        features,
        pred,
        h,
        w: wd,
    }
}

/// Reference inference pass over whole tensors, used to cross-check the
/// streaming pass.
pub fn forward_eval_dense(weights: &NetworkWeights, input: &NetworkInput) -> Result<RawPrediction> {
    let arch = &weights.arch;
    let mut preds = Vec::new();
    let mut prev: Option<(Tensor, Tensor)> = None;
    for (k, level) in input.levels.iter().enumerate() {
        let w = weights.block(k);
        let p = &w.params.0;
        let r = &w.running;
        let x = match prev.as_ref() {
            None => level.clone(),
            Some((f, pr)) => concat_channels(&[
                &resize_forward(f, level.h, level.w),
                &resize_forward(pr, level.h, level.w),
                level,
            ]),
        };
        let eval_norm = |t: &mut Tensor, s: &[f64], o: &[f64], m: &[f64], v: &[f64]| {
            let hw = t.h * t.w;
            for i in 0..t.n {
                norm_apply_eval(t.sample_mut(i), hw, s, o, m, v, arch.norm_eps);
            }
            t.data.iter_mut().for_each(|e| *e = leaky(*e, arch.leaky_slope));
        };
        let mut c1 = conv_forward(conv1_shape(w), &p[CONV1_W], &p[CONV1_B], &x);
        eval_norm(&mut c1, &p[NORM1_S], &p[NORM1_O], &r.mean1, &r.var1);
        let mut c2 = conv_forward(conv2_shape(w), &p[CONV2_W], &p[CONV2_B], &c1);
        eval_norm(&mut c2, &p[NORM2_S], &p[NORM2_O], &r.mean2, &r.var2);
        let pred = map(&conv_forward(pred_shape(w), &p[PRED_W], &p[PRED_B], &c2), f64::tanh);
        preds.push(pred.clone());
        prev = Some((c2, pred));
    }
    Ok(RawPrediction { levels: preds })
}
