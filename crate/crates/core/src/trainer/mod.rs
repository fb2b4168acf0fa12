//! Coarse-to-fine training.
//!
//! Each stage introduces one parameter group, coarsest first; the shared top
//! group trains as the last stage. Levels above the current stage are taken
//! from the ground-truth decomposition so the image loss stays meaningful.

mod checkpoint;
pub mod dataset;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossValue};
use crate::phasenet::{loss_and_gradients, ArchConfig, NetworkWeights, Params, TripletDecomposition};
use crate::pyramid::{FilterBank, PyramidConfig};

pub use checkpoint::{Checkpoint, RngState};
pub use dataset::{
    load_triplets, sample_batch, synthetic_triplets, translating_triplet, SyntheticConfig, TrainingSample,
    TripletDataset,
};

/// Optimizer, schedule and sampling settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    /// Batch sizes of the second-finest and finest stage.
    pub fine_batch_sizes: [usize; 2],
    pub epochs: usize,
    /// Epochs of the two finest stages.
    pub fine_epochs: usize,
    pub patch: usize,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Train only the newest group in each stage.
    pub freeze_earlier: bool,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            fine_batch_sizes: [16, 12],
            epochs: 12,
            fine_epochs: 6,
            patch: 256,
            flip_horizontal: true,
            flip_vertical: true,
            freeze_earlier: false,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("moment decays must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("optimizer epsilon must be positive".into());
        }
        if self.batch_size == 0 || self.fine_batch_sizes.contains(&0) || self.patch == 0 {
            return bad("batch sizes and patch must be positive".into());
        }
        self.loss.validate()
    }
}

/// Architecture, pyramid, optimizer and synthetic-data settings that belong
/// together.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingProfile {
    pub arch: ArchConfig,
    pub pyramid: PyramidConfig,
    pub train: TrainConfig,
    pub data: SyntheticConfig,
}

impl TrainingProfile {
    /// 256×256 patches, ten levels, width 64, batches of 32/16/12.
    pub fn full() -> Self {
        TrainingProfile {
            arch: ArchConfig::default(),
            pyramid: PyramidConfig::default(),
            train: TrainConfig::default(),
            data: SyntheticConfig::default(),
        }
    }

    /// 64×64 patches, six levels and 512 translating-texture triples; sized
    /// for a single CPU core.
    pub fn desk_scale() -> Self {
        TrainingProfile {
            arch: ArchConfig {
                width: 32,
                ..ArchConfig::with_levels(6)
            },
            pyramid: PyramidConfig::with_levels(6),
            train: TrainConfig {
                learning_rate: 2e-3,
                batch_size: 8,
                fine_batch_sizes: [8, 8],
                epochs: 6,
                fine_epochs: 6,
                patch: 64,
                ..TrainConfig::default()
            },
            data: SyntheticConfig::default(),
        }
    }

    /// Sets every seed of the profile.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.data.seed = seed;
        self
    }
}

/// One step of the curriculum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub index: usize,
    /// Blocks predicted in this stage (`m`), counting the residual block.
    pub trained: usize,
    /// Group introduced by this stage.
    pub group: usize,
    /// Groups receiving updates.
    pub trainable: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
}

/// One stage per parameter group, in block order.
pub fn plan_stages(weights: &NetworkWeights, config: &TrainConfig) -> Vec<Stage> {
    let base = weights.arch.blocks();
    let groups = weights.groups.len();
    (0..groups)
        .map(|g| {
            let trained = weights.group_blocks(g).into_iter().filter(|&b| b < base).max().map_or(0, |b| b + 1);
            let from_end = groups - 1 - g;
            let (batch_size, epochs) = match from_end {
                0 => (config.fine_batch_sizes[1], config.fine_epochs),
                1 => (config.fine_batch_sizes[0], config.fine_epochs),
                _ => (config.batch_size, config.epochs),
            };
            Stage {
                index: g,
                trained,
                group: g,
                trainable: if config.freeze_earlier { vec![g] } else { (0..=g).collect() },
                batch_size,
                epochs,
            }
        })
        .collect()
}

/// One bias-corrected adaptive-moment update of a scalar parameter at step
/// `t` (1-based).
#[inline]
pub fn adam_update(param: &mut f64, m: &mut f64, v: &mut f64, grad: f64, t: u64, config: &TrainConfig) {
    *m = config.beta1 * *m + (1.0 - config.beta1) * grad;
    *v = config.beta2 * *v + (1.0 - config.beta2) * grad * grad;
    let m_hat = *m / (1.0 - config.beta1.powf(t as f64));
    let v_hat = *v / (1.0 - config.beta2.powf(t as f64));
    *param -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
}

/// Adaptive-moment optimizer state, one step counter per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub steps: Vec<u64>,
    pub first: Vec<Params>,
    pub second: Vec<Params>,
}

impl Adam {
    pub fn new(weights: &NetworkWeights) -> Self {
        let zeros: Vec<Params> = weights.groups.iter().map(|g| g.params.zeros_like()).collect();
        Adam {
            steps: vec![0; zeros.len()],
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one update to the listed groups.
    pub fn step(&mut self, weights: &mut NetworkWeights, grads: &[Params], groups: &[usize], config: &TrainConfig) {
        for &g in groups {
            self.steps[g] += 1;
            let t = self.steps[g];
            let params = &mut weights.groups[g].params.0;
            for (k, tensor) in params.iter_mut().enumerate() {
                let (m, v, gr) = (&mut self.first[g].0[k], &mut self.second[g].0[k], &grads[g].0[k]);
                for i in 0..tensor.len() {
                    adam_update(&mut tensor[i], &mut m[i], &mut v[i], gr[i], t, config);
                }
            }
        }
    }
}

/// Mean loss terms of one epoch, emitted as one log record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    pub image_term: f64,
    pub phase_term: f64,
    pub total: f64,
}

/// Per-epoch mean losses of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub stage: usize,
    pub epochs: Vec<EpochRecord>,
}

impl StageTrace {
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }
}

/// Weights, optimizer and sampling state of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub weights: NetworkWeights,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    /// First stage not yet completed.
    pub next_stage: usize,
    pub config: TrainConfig,
    pub pyramid: PyramidConfig,
    bank: FilterBank,
}

impl Trainer {
    /// A fresh run. Weights and sampling draw from independent streams of
    /// `config.seed`.
    pub fn new(arch: ArchConfig, pyramid: PyramidConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if arch.levels != pyramid.levels || arch.orientations != pyramid.orientations {
            return Err(Error::InvalidConfig(
                "network and pyramid disagree on levels or orientations".into(),
            ));
        }
        let weights = NetworkWeights::init(arch, config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let adam = Adam::new(&weights);
        Trainer::assemble(weights, adam, rng, 0, config, pyramid)
    }

    fn assemble(
        weights: NetworkWeights,
        adam: Adam,
        rng: ChaCha8Rng,
        next_stage: usize,
        config: TrainConfig,
        pyramid: PyramidConfig,
    ) -> Result<Self> {
        let bank = FilterBank::new(&pyramid, (config.patch, config.patch))?;
        Ok(Trainer {
            weights,
            adam,
            rng,
            next_stage,
            config,
            pyramid,
            bank,
        })
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn stages(&self) -> Vec<Stage> {
        plan_stages(&self.weights, &self.config)
    }

    pub fn is_finished(&self) -> bool {
        self.next_stage >= self.stages().len()
    }

    /// Decomposes single-channel triples with the training filter bank.
    pub fn batch_decompositions(&self, samples: &[TrainingSample]) -> Result<Vec<TripletDecomposition>> {
        samples
            .iter()
            .map(|s| TripletDecomposition::new(&self.bank, &s.first, &s.middle, &s.last))
            .collect()
    }

    /// Runs every epoch of `stage`, calling `on_epoch` after each.
    pub fn train_stage(
        &mut self,
        stage: &Stage,
        dataset: &TripletDataset,
        on_epoch: &mut dyn FnMut(&EpochRecord),
    ) -> Result<StageTrace> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset("training set".into()));
        }
        let batches = dataset.len().div_ceil(stage.batch_size);
        let flips = (self.config.flip_horizontal, self.config.flip_vertical);
        let mut trace = StageTrace {
            stage: stage.index,
            epochs: Vec::with_capacity(stage.epochs),
        };
        for epoch in 0..stage.epochs {
            let mut sum = LossValue {
                total: 0.0,
                image_term: 0.0,
                phase_term: 0.0,
            };
            for _ in 0..batches {
                let samples = sample_batch(dataset, self.config.patch, stage.batch_size, flips, &mut self.rng)?;
                let batch = self.batch_decompositions(&samples)?;
                let out = loss_and_gradients(&self.weights, &batch, &self.bank, stage.trained, &self.config.loss)?;
                out.tape.update_running_stats(&mut self.weights);
                self.adam.step(&mut self.weights, &out.grads, &stage.trainable, &self.config);
                sum.total += out.loss.total;
                sum.image_term += out.loss.image_term;
                sum.phase_term += out.loss.phase_term;
            }
            let n = batches as f64;
            let record = EpochRecord {
                stage: stage.index,
                epoch,
                image_term: sum.image_term / n,
                phase_term: sum.phase_term / n,
                total: sum.total / n,
            };
            on_epoch(&record);
            trace.epochs.push(record);
        }
        Ok(trace)
    }

    /// Runs the remaining stages. `on_stage` sees the trainer after every
    /// completed stage (for checkpointing).
    pub fn run(
        &mut self,
        dataset: &TripletDataset,
        on_epoch: &mut dyn FnMut(&EpochRecord),
        on_stage: &mut dyn FnMut(&Trainer) -> Result<()>,
    ) -> Result<Vec<StageTrace>> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset("training set".into()));
        }
        let stages = self.stages();
        let mut traces = Vec::new();
        while self.next_stage < stages.len() {
            let stage = &stages[self.next_stage];
            traces.push(self.train_stage(stage, dataset, on_epoch)?);
            self.next_stage += 1;
            on_stage(self)?;
        }
        Ok(traces)
    }
}

/// Trains a fresh model through every stage.
pub fn train_full(
    dataset: &TripletDataset,
    arch: ArchConfig,
    pyramid: PyramidConfig,
    config: TrainConfig,
) -> Result<(NetworkWeights, Vec<StageTrace>)> {
    let mut trainer = Trainer::new(arch, pyramid, config)?;
    let traces = trainer.run(dataset, &mut |_| {}, &mut |_| Ok(()))?;
    Ok((trainer.weights, traces))
}
