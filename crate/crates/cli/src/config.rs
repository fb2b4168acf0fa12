//! Flat `key = value` configuration merged with command-line flags.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use phasenet_core::imageio::BitDepth;
use phasenet_core::losses::LossConfig;
use phasenet_core::trainer::{SyntheticConfig, TrainConfig, TrainingProfile};
use phasenet_core::{ArchConfig, PyramidConfig};

use crate::GlobalArgs;

/// Every recognised configuration key.
pub const KEYS: &[&str] = &[
    "profile",
    "seed",
    "levels",
    "orientations",
    "scale_factor",
    "transition_width",
    "width",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_eps",
    "batch_size",
    "fine_batch_sizes",
    "epochs",
    "fine_epochs",
    "patch",
    "flip_horizontal",
    "flip_vertical",
    "freeze_earlier",
    "phase_weight",
    "psnr_cap",
    "bit_depth",
    "synthetic_count",
    "synthetic_size",
    "synthetic_min_shift",
    "synthetic_max_shift",
    "synthetic_max_frequency",
];

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub pyramid: PyramidConfig,
    /// Whether the level count was set explicitly.
    pub levels_set: bool,
    pub width: usize,
    pub train: TrainConfig,
    pub synthetic: SyntheticConfig,
    pub psnr_cap: f64,
    pub bit_depth: BitDepth,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            pyramid: PyramidConfig::default(),
            levels_set: false,
            width: ArchConfig::default().width,
            train: TrainConfig::default(),
            synthetic: SyntheticConfig::default(),
            psnr_cap: phasenet_core::evalkit::PSNR_CAP,
            bit_depth: BitDepth::Eight,
            deterministic: false,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`", n + 1);
        };
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            bail!("line {}: unknown configuration key `{key}`", n + 1);
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            bail!("line {}: duplicate key `{key}`", n + 1);
        }
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

impl RunConfig {
    fn use_profile(&mut self, profile: TrainingProfile) {
        self.pyramid = profile.pyramid;
        self.width = profile.arch.width;
        self.train = profile.train;
        self.synthetic = profile.data;
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "profile" => match value {
                "full" => self.use_profile(TrainingProfile::full()),
                "desk" => self.use_profile(TrainingProfile::desk_scale()),
                _ => bail!("`profile` must be `full` or `desk`"),
            },
            "seed" => self.seed = parse(key, value)?,
            "levels" => {
                self.pyramid.levels = parse(key, value)?;
                self.levels_set = true;
            }
            "orientations" => self.pyramid.orientations = parse(key, value)?,
            "scale_factor" => self.pyramid.scale_factor = parse(key, value)?,
            "transition_width" => self.pyramid.transition_width = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "beta1" => self.train.beta1 = parse(key, value)?,
            "beta2" => self.train.beta2 = parse(key, value)?,
            "adam_eps" => self.train.adam_eps = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "fine_batch_sizes" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                let [a, b] = parts.as_slice() else {
                    bail!("`fine_batch_sizes` takes two comma-separated values");
                };
                self.train.fine_batch_sizes = [parse(key, a)?, parse(key, b)?];
            }
            "epochs" => self.train.epochs = parse(key, value)?,
            "fine_epochs" => self.train.fine_epochs = parse(key, value)?,
            "patch" => self.train.patch = parse(key, value)?,
            "flip_horizontal" => self.train.flip_horizontal = parse(key, value)?,
            "flip_vertical" => self.train.flip_vertical = parse(key, value)?,
            "freeze_earlier" => self.train.freeze_earlier = parse(key, value)?,
            "phase_weight" => self.train.loss = LossConfig { phase_weight: parse(key, value)? },
            "psnr_cap" => self.psnr_cap = parse(key, value)?,
            "bit_depth" => {
                self.bit_depth = match value {
                    "8" => BitDepth::Eight,
                    "16" => BitDepth::Sixteen,
                    _ => bail!("`bit_depth` must be 8 or 16"),
                }
            }
            "synthetic_count" => self.synthetic.count = parse(key, value)?,
            "synthetic_size" => self.synthetic.size = parse(key, value)?,
            "synthetic_min_shift" => self.synthetic.min_shift = parse(key, value)?,
            "synthetic_max_shift" => self.synthetic.max_shift = parse(key, value)?,
            "synthetic_max_frequency" => self.synthetic.max_frequency = parse(key, value)?,
            _ => bail!("unknown configuration key `{key}`"),
        }
        Ok(())
    }

    /// Defaults, then the file named by `--config`, then explicit flags.
    pub fn resolve(args: &GlobalArgs) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading configuration {}", path.display()))?;
            let pairs = parse_pairs(&text).with_context(|| format!("in {}", path.display()))?;
            // the profile sets defaults that the other keys refine
            if let Some(profile) = pairs.get("profile") {
                cfg.apply("profile", profile)?;
            }
            for (k, v) in pairs.iter().filter(|(k, _)| k.as_str() != "profile") {
                cfg.apply(k, v)?;
            }
        }
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(levels) = args.levels {
            cfg.pyramid.levels = levels;
            cfg.levels_set = true;
        }
        if let Some(o) = args.orientations {
            cfg.pyramid.orientations = o;
        }
        if let Some(s) = args.scale_factor {
            cfg.pyramid.scale_factor = s;
        }
        cfg.deterministic = args.deterministic;
        cfg.train.seed = cfg.seed;
        cfg.synthetic.seed = cfg.seed;
        cfg.pyramid.validate()?;
        cfg.train.validate()?;
        if cfg.width == 0 {
            bail!("`width` must be positive");
        }
        if !(cfg.psnr_cap > 0.0) {
            bail!("`psnr_cap` must be positive");
        }
        Ok(cfg)
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            levels: self.pyramid.levels,
            orientations: self.pyramid.orientations,
            width: self.width,
            ..ArchConfig::default()
        }
    }
}
