//! Training snapshots stored in the array container.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::phasenet::{ArchConfig, BlockWeights, NetworkWeights, Params, RunningStats, PARAM_NAMES};
use crate::pyramid::PyramidConfig;

use super::{Adam, TrainConfig, Trainer};

const KIND: &[u8] = b"phasenet-checkpoint";

/// Exact position of the sampling generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConfigSnapshot {
    arch: ArchConfig,
    pyramid: PyramidConfig,
    train: TrainConfig,
}

/// Everything needed to resume a run or to run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: NetworkWeights,
    pub adam: Adam,
    /// First stage not yet completed.
    pub next_stage: usize,
    pub rng: RngState,
    pub train: TrainConfig,
    pub pyramid: PyramidConfig,
}

fn tensor_dims(w: &BlockWeights, index: usize) -> Vec<usize> {
    let k = w.kernel;
    match index {
        0 => vec![w.width, w.in_channels, k, k],
        4 => vec![w.width, w.width, k, k],
        8 => vec![w.pred_channels, w.width],
        _ => vec![w.params.0[index].len()],
    }
}

fn put_params(c: &mut Container, prefix: &str, w: &BlockWeights, params: &Params) -> Result<()> {
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        c.put_f64(format!("{prefix}.{name}"), tensor_dims(w, i), params.0[i].clone())?;
    }
    Ok(())
}

fn get_params(c: &Container, prefix: &str, like: &Params) -> Result<Params> {
    let mut out = Vec::with_capacity(PARAM_NAMES.len());
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        let key = format!("{prefix}.{name}");
        let data = c.f64s(&key)?;
        if data.len() != like.0[i].len() {
            return Err(Error::Malformed(format!("`{key}` has {} values", data.len())));
        }
        out.push(data.to_vec());
    }
    Ok(Params(out))
}

fn to_usize(v: u64) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Malformed("value out of range".into()))
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.put_bytes("kind", KIND.to_vec())?;
        let snapshot = ConfigSnapshot {
            arch: self.weights.arch,
            pyramid: self.pyramid,
            train: self.train.clone(),
        };
        let json = serde_json::to_vec(&snapshot).map_err(|e| Error::Malformed(e.to_string()))?;
        c.put_bytes("config", json)?;
        c.put_u64(
            "state",
            vec![
                self.next_stage as u64,
                self.rng.stream,
                self.rng.word_pos as u64,
                (self.rng.word_pos >> 64) as u64,
            ],
        )?;
        c.put_bytes("rng.seed", self.rng.seed.to_vec())?;
        c.put_u64("block_groups", self.weights.block_groups.iter().map(|&g| g as u64).collect())?;
        c.put_u64("adam.steps", self.adam.steps.clone())?;
        for (g, w) in self.weights.groups.iter().enumerate() {
            let p = format!("group.{g:03}");
            c.put_u64(
                format!("{p}.shape"),
                [w.kernel, w.in_channels, w.width, w.pred_channels].map(|v| v as u64).to_vec(),
            )?;
            put_params(&mut c, &p, w, &w.params)?;
            let r = &w.running;
            for (name, v) in [("mean1", &r.mean1), ("var1", &r.var1), ("mean2", &r.mean2), ("var2", &r.var2)] {
                c.put_f64(format!("{p}.running.{name}"), vec![v.len()], v.clone())?;
            }
            put_params(&mut c, &format!("adam.{g:03}.m"), w, &self.adam.first[g])?;
            put_params(&mut c, &format!("adam.{g:03}.v"), w, &self.adam.second[g])?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.bytes("kind")? != KIND {
            return Err(Error::Malformed("not a checkpoint".into()));
        }
        let snapshot: ConfigSnapshot =
            serde_json::from_slice(c.bytes("config")?).map_err(|e| Error::Malformed(e.to_string()))?;
        let state = c.u64s("state")?;
        if state.len() != 4 {
            return Err(Error::Malformed("state entry".into()));
        }
        let seed: [u8; 32] = c
            .bytes("rng.seed")?
            .try_into()
            .map_err(|_| Error::Malformed("generator seed".into()))?;
        let block_groups = c.u64s("block_groups")?.iter().map(|&g| to_usize(g)).collect::<Result<Vec<_>>>()?;
        let group_count = block_groups.iter().max().map_or(0, |g| g + 1);
        let steps = c.u64s("adam.steps")?.to_vec();
        if steps.len() != group_count {
            return Err(Error::Malformed("optimizer step counts".into()));
        }

        let mut groups = Vec::with_capacity(group_count);
        let mut first = Vec::with_capacity(group_count);
        let mut second = Vec::with_capacity(group_count);
        for g in 0..group_count {
            let p = format!("group.{g:03}");
            let shape = c.u64s(&format!("{p}.shape"))?;
            if shape.len() != 4 {
                return Err(Error::Malformed(format!("{p}.shape")));
            }
            let [kernel, in_channels, width, pred_channels] =
                [to_usize(shape[0])?, to_usize(shape[1])?, to_usize(shape[2])?, to_usize(shape[3])?];
            let running_of = |name: &str| -> Result<Vec<f64>> { Ok(c.f64s(&format!("{p}.running.{name}"))?.to_vec()) };
            let mut block = BlockWeights {
                kernel,
                in_channels,
                width,
                pred_channels,
                params: Params(Vec::new()),
                running: RunningStats {
                    mean1: running_of("mean1")?,
                    var1: running_of("var1")?,
                    mean2: running_of("mean2")?,
                    var2: running_of("var2")?,
                },
            };
            let like = Params(
                (0..PARAM_NAMES.len())
                    .map(|i| {
                        let key = format!("{p}.{}", PARAM_NAMES[i]);
                        c.f64s(&key).map(|d| vec![0.0; d.len()])
                    })
                    .collect::<Result<_>>()?,
            );
            block.params = get_params(c, &p, &like)?;
            block.validate()?;
            first.push(get_params(c, &format!("adam.{g:03}.m"), &like)?);
            second.push(get_params(c, &format!("adam.{g:03}.v"), &like)?);
            groups.push(block);
        }
        let weights = NetworkWeights {
            arch: snapshot.arch,
            groups,
            block_groups,
        };
        weights.validate()?;
        Ok(Checkpoint {
            weights,
            adam: Adam { steps, first, second },
            next_stage: to_usize(state[0])?,
            rng: RngState {
                seed,
                stream: state[1],
                word_pos: u128::from(state[2]) | (u128::from(state[3]) << 64),
            },
            train: snapshot.train,
            pyramid: snapshot.pyramid,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_container(&Container::load(path)?)
    }
}

impl Trainer {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            weights: self.weights.clone(),
            adam: self.adam.clone(),
            next_stage: self.next_stage,
            rng: RngState::capture(&self.rng),
            train: self.config.clone(),
            pyramid: self.pyramid,
        }
    }

    /// Continues a run from a snapshot.
    pub fn resume(ck: Checkpoint) -> Result<Self> {
        ck.train.validate()?;
        Trainer::assemble(ck.weights, ck.adam, ck.rng.restore(), ck.next_stage, ck.train, ck.pyramid)
    }
}
