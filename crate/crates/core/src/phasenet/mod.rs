//! The decoder that predicts the pyramid decomposition of the middle frame.
//!
//! Block 0 sees the two low-pass residuals. Block `k ≥ 1` sees the upsampled
//! features and prediction of block `k - 1` together with the normalized
//! phases and amplitudes of oriented level `k`. The top blocks share one
//! parameter set, and extra blocks for larger canvases alias that set.

pub mod layers;
pub mod network;
mod objective;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::grid::{Grid, Image, RealGrid};
use crate::pyramid::{Decomposition, FilterBank, Subband};

pub use layers::Tensor;
pub use network::{ForwardTape, Mode};
pub use objective::{batch_loss, hybrid_reconstruct, loss_and_gradients, BatchLoss, TripletDecomposition};

/// Floor on the per-level normalization divisor.
pub const NORM_FLOOR: f64 = 1e-8;

/// Hyperparameters of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Oriented pyramid levels the model is trained for.
    pub levels: usize,
    pub orientations: usize,
    /// Feature channels of every block.
    pub width: usize,
    /// Number of top blocks sharing one parameter set.
    pub shared_top: usize,
    /// Leading blocks that use 1x1 convolutions.
    pub small_kernel_blocks: usize,
    pub norm_momentum: f64,
    pub norm_eps: f64,
    pub leaky_slope: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            levels: 10,
            orientations: 4,
            width: 64,
            shared_top: 3,
            small_kernel_blocks: 3,
            norm_momentum: 0.9,
            norm_eps: 1e-5,
            leaky_slope: 0.2,
        }
    }
}

impl ArchConfig {
    pub fn with_levels(levels: usize) -> Self {
        ArchConfig {
            levels,
            ..ArchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.levels == 0 {
            return bad("levels must be at least 1");
        }
        if self.orientations == 0 || self.width == 0 {
            return bad("orientations and width must be positive");
        }
        if !(0.0..1.0).contains(&self.norm_momentum) {
            return bad("normalization momentum must lie in [0, 1)");
        }
        if !(self.norm_eps > 0.0) || !self.leaky_slope.is_finite() {
            return bad("normalization epsilon must be positive");
        }
        Ok(())
    }

    pub fn blocks(&self) -> usize {
        self.levels + 1
    }

    /// Channels of the level input at block `block`.
    pub fn level_channels(&self, block: usize) -> usize {
        if block == 0 {
            2
        } else {
            4 * self.orientations
        }
    }

    /// Output channels of the prediction head of block `block`.
    pub fn pred_channels(&self, block: usize) -> usize {
        if block == 0 {
            1
        } else {
            2 * self.orientations
        }
    }

    pub fn in_channels(&self, block: usize) -> usize {
        if block == 0 {
            2
        } else {
            self.width + self.pred_channels(block - 1) + self.level_channels(block)
        }
    }

    /// First block of the shared group; equals `blocks()` when nothing is shared.
    pub fn shared_start(&self) -> usize {
        let blocks = self.blocks();
        let shareable = blocks.saturating_sub(2);
        let count = self.shared_top.min(shareable);
        if count < 2 {
            blocks
        } else {
            blocks - count
        }
    }

    /// Group index of every base block.
    pub fn block_groups(&self) -> Vec<usize> {
        let start = self.shared_start();
        (0..self.blocks()).map(|b| b.min(start)).collect()
    }

    pub fn kernel(&self, block: usize) -> usize {
        if block < self.small_kernel_blocks && block < self.shared_start() {
            1
        } else {
            3
        }
    }
}

/// Names of the trainable tensors of one block, in storage order.
pub const PARAM_NAMES: [&str; 10] = [
    "conv1.weight",
    "conv1.bias",
    "norm1.scale",
    "norm1.offset",
    "conv2.weight",
    "conv2.bias",
    "norm2.scale",
    "norm2.offset",
    "pred.weight",
    "pred.bias",
];

/// Positions of the block tensors within `Params`.
pub const CONV1_W: usize = 0;
pub const CONV1_B: usize = 1;
pub const NORM1_S: usize = 2;
pub const NORM1_O: usize = 3;
pub const CONV2_W: usize = 4;
pub const CONV2_B: usize = 5;
pub const NORM2_S: usize = 6;
pub const NORM2_O: usize = 7;
pub const PRED_W: usize = 8;
pub const PRED_B: usize = 9;

/// The ten trainable tensors of one block. Also used for gradients and
/// optimizer moments of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Params(pub Vec<Vec<f64>>);

impl Params {
    pub fn zeros_like(&self) -> Self {
        Params(self.0.iter().map(|t| vec![0.0; t.len()]).collect())
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tensor(&self, index: usize) -> &[f64] {
        &self.0[index]
    }
}

/// Running normalization statistics of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean1: Vec<f64>,
    pub var1: Vec<f64>,
    pub mean2: Vec<f64>,
    pub var2: Vec<f64>,
}

impl RunningStats {
    fn new(width: usize) -> Self {
        RunningStats {
            mean1: vec![0.0; width],
            var1: vec![1.0; width],
            mean2: vec![0.0; width],
            var2: vec![1.0; width],
        }
    }
}

/// Parameters of one block parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub kernel: usize,
    pub in_channels: usize,
    pub width: usize,
    pub pred_channels: usize,
    pub params: Params,
    pub running: RunningStats,
}

impl BlockWeights {
    fn shapes(kernel: usize, in_channels: usize, width: usize, pred: usize) -> [usize; 10] {
        [
            width * in_channels * kernel * kernel,
            width,
            width,
            width,
            width * width * kernel * kernel,
            width,
            width,
            width,
            pred * width,
            pred,
        ]
    }

    fn init(kernel: usize, in_channels: usize, width: usize, pred: usize, slope: f64, rng: &mut ChaCha8Rng) -> Self {
        let shapes = Self::shapes(kernel, in_channels, width, pred);
        let fans = [in_channels * kernel * kernel, width * kernel * kernel, width];
        let mut draw = |len: usize, fan_in: usize| -> Vec<f64> {
            let std = (2.0 / (fan_in as f64 * (1.0 + slope * slope))).sqrt();
            let normal = Normal::new(0.0, std).expect("finite deviation");
            (0..len).map(|_| normal.sample(rng)).collect()
        };
        let tensors = vec![
            draw(shapes[CONV1_W], fans[0]),
            vec![0.0; width],
            vec![1.0; width],
            vec![0.0; width],
            draw(shapes[CONV2_W], fans[1]),
            vec![0.0; width],
            vec![1.0; width],
            vec![0.0; width],
            draw(shapes[PRED_W], fans[2]),
            vec![0.0; pred],
        ];
        BlockWeights {
            kernel,
            in_channels,
            width,
            pred_channels: pred,
            params: Params(tensors),
            running: RunningStats::new(width),
        }
    }

    /// Checks tensor lengths against the declared geometry.
    pub fn validate(&self) -> Result<()> {
        let shapes = Self::shapes(self.kernel, self.in_channels, self.width, self.pred_channels);
        if self.params.0.len() != shapes.len() {
            return Err(shape_err(shapes.len(), self.params.0.len()));
        }
        for (t, &len) in self.params.0.iter().zip(&shapes) {
            if t.len() != len {
                return Err(shape_err(len, t.len()));
            }
        }
        for s in [&self.running.mean1, &self.running.var1, &self.running.mean2, &self.running.var2] {
            if s.len() != self.width {
                return Err(shape_err(self.width, s.len()));
            }
        }
        Ok(())
    }
}

/// All decoder parameters with the block-to-group sharing map.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub arch: ArchConfig,
    pub groups: Vec<BlockWeights>,
    /// Parameter group of every block, coarsest first.
    pub block_groups: Vec<usize>,
}

impl NetworkWeights {
    /// Freshly initialized weights drawn from `seed`.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block_groups = arch.block_groups();
        let group_count = block_groups.last().map_or(0, |g| g + 1);
        let groups = (0..group_count)
            .map(|g| {
                BlockWeights::init(
                    arch.kernel(g),
                    arch.in_channels(g),
                    arch.width,
                    arch.pred_channels(g),
                    arch.leaky_slope,
                    &mut rng,
                )
            })
            .collect();
        Ok(NetworkWeights {
            arch,
            groups,
            block_groups,
        })
    }

    /// Number of blocks, including extension aliases.
    pub fn blocks(&self) -> usize {
        self.block_groups.len()
    }

    /// Oriented levels the blocks cover.
    pub fn levels(&self) -> usize {
        self.blocks() - 1
    }

    pub fn block(&self, block: usize) -> &BlockWeights {
        &self.groups[self.block_groups[block]]
    }

    /// Trainable parameters, counting shared sets once.
    pub fn parameter_count(&self) -> usize {
        self.groups.iter().map(|g| g.params.len()).sum()
    }

    /// Blocks that use parameter group `group`.
    pub fn group_blocks(&self, group: usize) -> Vec<usize> {
        (0..self.blocks())
            .filter(|&b| self.block_groups[b] == group)
            .collect()
    }

    /// Appends blocks aliasing the top parameter group until the model covers
    /// `levels` oriented levels. No parameters are copied.
    pub fn extend_for_resolution(&self, levels: usize) -> Result<NetworkWeights> {
        if levels < self.levels() {
            return Err(Error::InvalidConfig(format!(
                "cannot extend a {}-level model to {levels} levels",
                self.levels()
            )));
        }
        let mut out = self.clone();
        if levels == self.levels() {
            return Ok(out);
        }
        let top = *self.block_groups.last().expect("at least one block");
        let expected = self.arch.in_channels(2);
        if self.blocks() < 3 || self.groups[top].in_channels != expected {
            return Err(Error::InvalidConfig(
                "model has no top group that can be reused for extra levels".into(),
            ));
        }
        out.block_groups.resize(levels + 1, top);
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.block_groups.len() < self.arch.blocks() {
            return Err(shape_err(self.arch.blocks(), self.block_groups.len()));
        }
        for (b, &g) in self.block_groups.iter().enumerate() {
            let group = self
                .groups
                .get(g)
                .ok_or_else(|| Error::Malformed(format!("block {b} refers to missing group {g}")))?;
            group.validate()?;
            let base = b.min(self.arch.blocks() - 1);
            if group.in_channels != self.arch.in_channels(base)
                || group.pred_channels != self.arch.pred_channels(base)
                || group.width != self.arch.width
            {
                return Err(Error::Malformed(format!("block {b} channel layout")));
            }
        }
        Ok(())
    }
}

/// Normalized per-level inputs for a batch. `levels[0]` holds the two
/// residuals; `levels[k]` holds `φ1, φ2, A1, A2` (one channel per
/// orientation each) of oriented level `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInput {
    pub levels: Vec<Tensor>,
}

impl NetworkInput {
    pub fn batch(&self) -> usize {
        self.levels.first().map_or(0, |t| t.n)
    }

    /// Concatenates single-sample inputs into one batch.
    pub fn stack(items: &[NetworkInput]) -> Result<NetworkInput> {
        let first = items.first().ok_or_else(|| Error::EmptyDataset("empty batch".into()))?;
        let mut levels = Vec::with_capacity(first.levels.len());
        for (l, t0) in first.levels.iter().enumerate() {
            let mut data = Vec::with_capacity(t0.data.len() * items.len());
            let mut n = 0;
            for item in items {
                let t = item
                    .levels
                    .get(l)
                    .ok_or_else(|| shape_err(first.levels.len(), item.levels.len()))?;
                if (t.c, t.h, t.w) != (t0.c, t0.h, t0.w) {
                    return Err(shape_err((t0.c, t0.h, t0.w), (t.c, t.h, t.w)));
                }
                data.extend_from_slice(&t.data);
                n += t.n;
            }
            levels.push(Tensor::from_vec(n, t0.c, t0.h, t0.w, data));
        }
        Ok(NetworkInput { levels })
    }
}

/// `tanh` outputs per block: 1 channel at block 0, then `b` phase channels
/// followed by `b` amplitude-mixing channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    pub levels: Vec<Tensor>,
}

impl RawPrediction {
    /// The prediction for one sample of the batch.
    pub fn sample(&self, index: usize) -> RawPrediction {
        RawPrediction {
            levels: self
                .levels
                .iter()
                .map(|t| Tensor::from_vec(1, t.c, t.h, t.w, t.sample(index).to_vec()))
                .collect(),
        }
    }
}

fn max_abs_of(grids: &[&RealGrid]) -> f64 {
    grids.iter().map(|g| g.max_abs()).fold(0.0, f64::max)
}

/// Scales phases by `1/π` and amplitudes and residuals by their maximum over
/// both frames at each level.
pub fn normalize_inputs(r1: &Decomposition, r2: &Decomposition) -> Result<NetworkInput> {
    if r1.levels() != r2.levels() {
        return Err(shape_err(r1.levels(), r2.levels()));
    }
    r2.lowpass.ensure_shape(r1.lowpass.shape())?;
    let (lh, lw) = r1.lowpass.shape();
    let divisor = max_abs_of(&[&r1.lowpass, &r2.lowpass]).max(NORM_FLOOR);
    let mut data = Vec::with_capacity(2 * lh * lw);
    for r in [r1, r2] {
        data.extend(r.lowpass.as_slice().iter().map(|v| v / divisor));
    }
    let mut levels = vec![Tensor::from_vec(1, 2, lh, lw, data)];

    for level in 1..=r1.levels() {
        let (row1, row2) = (&r1.bands[level - 1], &r2.bands[level - 1]);
        if row1.len() != row2.len() {
            return Err(shape_err(row1.len(), row2.len()));
        }
        let (h, w) = row1[0].data.shape();
        let amps: Vec<(RealGrid, RealGrid)> = row1
            .iter()
            .zip(row2)
            .map(|(a, b)| {
                b.data.ensure_shape((h, w))?;
                a.data.ensure_shape((h, w))?;
                Ok((a.amplitude(), b.amplitude()))
            })
            .collect::<Result<_>>()?;
        let divisor = amps
            .iter()
            .map(|(a, b)| a.max_abs().max(b.max_abs()))
            .fold(0.0, f64::max)
            .max(NORM_FLOOR);
        let b = row1.len();
        let mut data = Vec::with_capacity(4 * b * h * w);
        for row in [row1, row2] {
            for band in row {
                data.extend(band.phase().as_slice().iter().map(|p| p / PI));
            }
        }
        for pick in 0..2 {
            for pair in &amps {
                let a = if pick == 0 { &pair.0 } else { &pair.1 };
                data.extend(a.as_slice().iter().map(|v| v / divisor));
            }
        }
        levels.push(Tensor::from_vec(1, 4 * b, h, w, data));
    }
    Ok(NetworkInput { levels })
}

/// Affine map of a `tanh` output onto a `[0, 1]` mixing weight.
#[inline]
pub fn mixing_weight(raw: f64) -> f64 {
    0.5 * (raw + 1.0)
}

/// Turns a single-sample raw prediction into a decomposition: `φ̂ = π·raw`,
/// convex blends of the input amplitudes and low-pass residuals, and a zero
/// high-pass. Levels beyond the prediction are left zero.
pub fn remap(raw: &RawPrediction, r1: &Decomposition, r2: &Decomposition) -> Result<Decomposition> {
    if raw.levels.is_empty() || raw.levels.len() > r1.levels() + 1 {
        return Err(shape_err(format!("1..={} levels", r1.levels() + 1), raw.levels.len()));
    }
    if r1.levels() != r2.levels() {
        return Err(shape_err(r1.levels(), r2.levels()));
    }
    if raw.levels.iter().any(|t| t.n != 1) {
        return Err(Error::InvalidConfig("remap expects a single sample".into()));
    }
    let b = r1.config.orientations;
    let mut out = Decomposition {
        bands: r1
            .bands
            .iter()
            .map(|row| {
                row.iter()
                    .map(|s| Subband {
                        level: s.level,
                        orientation: s.orientation,
                        data: Grid::zeros(s.data.height(), s.data.width()),
                    })
                    .collect()
            })
            .collect(),
        lowpass: Grid::zeros(r1.lowpass.height(), r1.lowpass.width()),
        highpass: Grid::zeros(r1.highpass.height(), r1.highpass.width()),
        config: r1.config,
    };

    let t0 = &raw.levels[0];
    let (lh, lw) = r1.lowpass.shape();
    if (t0.c, t0.h, t0.w) != (1, lh, lw) {
        return Err(shape_err((1, lh, lw), (t0.c, t0.h, t0.w)));
    }
    r2.lowpass.ensure_shape((lh, lw))?;
    for (i, o) in out.lowpass.as_mut_slice().iter_mut().enumerate() {
        let alpha = mixing_weight(t0.data[i]);
        *o = alpha * r1.lowpass.as_slice()[i] + (1.0 - alpha) * r2.lowpass.as_slice()[i];
    }

    for (level, t) in raw.levels.iter().enumerate().skip(1) {
        let (h, w) = r1.bands[level - 1][0].data.shape();
        if (t.c, t.h, t.w) != (2 * b, h, w) {
            return Err(shape_err((2 * b, h, w), (t.c, t.h, t.w)));
        }
        for o in 0..b {
            let s1 = &r1.band(level, o).data;
            let s2 = &r2.band(level, o).data;
            s2.ensure_shape((h, w))?;
            let phase = t.plane(0, o);
            let mix = t.plane(0, b + o);
            let dst = out.band_mut(level, o).data.as_mut_slice();
            for i in 0..h * w {
                let beta = mixing_weight(mix[i]);
                let amp = beta * s1.as_slice()[i].norm() + (1.0 - beta) * s2.as_slice()[i].norm();
                dst[i] = Complex64::from_polar(amp, PI * phase[i]);
            }
        }
    }
    Ok(out)
}

/// Predicts the middle frame of `i1` and `i2`, one colour channel at a time
/// with the same weights. The result is clamped to `[0, 1]`.
pub fn interpolate(i1: &Image, i2: &Image, weights: &NetworkWeights, bank: &FilterBank) -> Result<Image> {
    i1.ensure_same_dims(i2)?;
    let (h, w, _) = i1.dims();
    if (h, w) != bank.finest() {
        return Err(shape_err(bank.finest(), (h, w)));
    }
    if bank.levels() > weights.levels() {
        return Err(Error::InvalidConfig(format!(
            "filter bank has {} levels but the model covers {}; extend it first",
            bank.levels(),
            weights.levels()
        )));
    }
    if bank.orientations() != weights.arch.orientations {
        return Err(shape_err(weights.arch.orientations, bank.orientations()));
    }
    let mut planes = Vec::with_capacity(i1.channels());
    for c in 0..i1.channels() {
        let r1 = bank.decompose(&i1.channel(c))?;
        let r2 = bank.decompose(&i2.channel(c))?;
        let input = normalize_inputs(&r1, &r2)?;
        let raw = network::forward_eval(weights, &input)?;
        let dec = remap(&raw, &r1, &r2)?;
        let img = bank.reconstruct(&dec, false)?;
        planes.push(img.map(|v| v.clamp(0.0, 1.0)));
    }
    Image::from_channels(&planes)
}

/// Runs the decoder on a batch, coarsest block first.
pub fn forward(weights: &NetworkWeights, input: &NetworkInput, mode: Mode) -> Result<RawPrediction> {
    match mode {
        Mode::Eval => network::forward_eval(weights, input),
        Mode::Train => network::forward_train(weights, input, weights.blocks().min(input.levels.len()))
            .map(|(raw, _)| raw),
    }
}

/// Training-mode forward that also folds the batch statistics into the
/// running averages.
pub fn forward_train_update(weights: &mut NetworkWeights, input: &NetworkInput) -> Result<RawPrediction> {
    let blocks = input.levels.len();
    let (raw, tape) = network::forward_train(weights, input, blocks)?;
    tape.update_running_stats(weights);
    Ok(raw)
}
