//! Frame triples: discovery on disk, synthetic generation and batch sampling.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::grid::{Image, RealGrid};
use crate::imageio::{probe_image, read_image};
use crate::synth::Texture;

#[derive(Debug, Clone)]
enum Frame {
    Memory(Arc<Image>),
    File(PathBuf),
}

impl Frame {
    fn load(&self) -> Result<Image> {
        match self {
            Frame::Memory(img) => Ok((**img).clone()),
            Frame::File(path) => read_image(path),
        }
    }
}

/// Consecutive frame triples `(I1, I, I2)`. Frames on disk are decoded on
/// demand.
#[derive(Debug, Clone)]
pub struct TripletDataset {
    frames: Vec<Frame>,
    dims: Vec<(usize, usize, usize)>,
    triplets: Vec<[usize; 3]>,
}

impl TripletDataset {
    /// Builds a dataset from in-memory sequences; every window of three
    /// consecutive frames of a sequence becomes a triple.
    pub fn from_sequences(sequences: Vec<Vec<Image>>) -> Result<Self> {
        let mut ds = TripletDataset {
            frames: Vec::new(),
            dims: Vec::new(),
            triplets: Vec::new(),
        };
        for seq in sequences {
            let frames = seq
                .into_iter()
                .map(|img| (img.dims(), Frame::Memory(Arc::new(img))))
                .collect();
            ds.push_sequence(frames)?;
        }
        ds.ensure_not_empty("no sequence has three frames")?;
        Ok(ds)
    }

    fn push_sequence(&mut self, frames: Vec<((usize, usize, usize), Frame)>) -> Result<()> {
        let base = self.frames.len();
        let count = frames.len();
        for (dims, frame) in frames {
            self.dims.push(dims);
            self.frames.push(frame);
        }
        for k in 0..count.saturating_sub(2) {
            let idx = [base + k, base + k + 1, base + k + 2];
            let d = self.dims[idx[0]];
            for &i in &idx[1..] {
                if self.dims[i] != d {
                    return Err(shape_err(d, self.dims[i]));
                }
            }
            self.triplets.push(idx);
        }
        Ok(())
    }

    fn ensure_not_empty(&self, why: &str) -> Result<()> {
        if self.triplets.is_empty() {
            return Err(Error::EmptyDataset(why.to_string()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// `(height, width, channels)` of triple `index`.
    pub fn dims(&self, index: usize) -> (usize, usize, usize) {
        self.dims[self.triplets[index][0]]
    }

    /// Decodes triple `index` as `[I1, I, I2]`.
    pub fn triplet(&self, index: usize) -> Result<[Image; 3]> {
        let [a, b, c] = self.triplets[index];
        Ok([self.frames[a].load()?, self.frames[b].load()?, self.frames[c].load()?])
    }
}

fn is_frame(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Enumerates triples under `root`. Every subdirectory holding PNG frames is
/// one sequence, ordered by file name; frames directly inside `root` form
/// a sequence of their own.
pub fn load_triplets(root: &Path) -> Result<TripletDataset> {
    if !root.is_dir() {
        return Err(Error::EmptyDataset(format!("{} is not a directory", root.display())));
    }
    let mut ds = TripletDataset {
        frames: Vec::new(),
        dims: Vec::new(),
        triplets: Vec::new(),
    };
    let mut sequences = vec![root.to_path_buf()];
    sequences.extend(sorted_entries(root)?.into_iter().filter(|p| p.is_dir()));
    for dir in sequences {
        let frames = sorted_entries(&dir)?
            .into_iter()
            .filter(|p| is_frame(p))
            .map(|p| Ok((probe_image(&p)?, Frame::File(p))))
            .collect::<Result<Vec<_>>>()?;
        ds.push_sequence(frames)?;
    }
    ds.ensure_not_empty(&format!("no sequence of three frames under {}", root.display()))?;
    Ok(ds)
}

/// One single-channel training triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub first: RealGrid,
    pub middle: RealGrid,
    pub last: RealGrid,
}

/// Crop window and flips shared by the three frames of a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    pub top: usize,
    pub left: usize,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl Augmentation {
    pub fn apply(&self, image: &Image, patch: usize) -> Result<Image> {
        let mut out = image.crop(self.top, self.left, patch, patch)?;
        if self.flip_horizontal {
            out = out.flip_horizontal();
        }
        if self.flip_vertical {
            out = out.flip_vertical();
        }
        Ok(out)
    }
}

/// Draws `batch_size` triples with replacement, crops a random `patch`
/// window and applies random flips, identically for the three frames. Colour
/// triples contribute one sample per channel.
pub fn sample_batch(
    dataset: &TripletDataset,
    patch: usize,
    batch_size: usize,
    flips: (bool, bool),
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainingSample>> {
    dataset.ensure_not_empty("cannot sample from an empty dataset")?;
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let index = rng.random_range(0..dataset.len());
        let (h, w, _) = dataset.dims(index);
        if h < patch || w < patch {
            return Err(Error::FrameTooSmall {
                height: h,
                width: w,
                patch,
            });
        }
        let aug = Augmentation {
            top: rng.random_range(0..=h - patch),
            left: rng.random_range(0..=w - patch),
            flip_horizontal: flips.0 && rng.random::<bool>(),
            flip_vertical: flips.1 && rng.random::<bool>(),
        };
        let [a, b, c] = dataset.triplet(index)?;
        let [a, b, c] = [aug.apply(&a, patch)?, aug.apply(&b, patch)?, aug.apply(&c, patch)?];
        for ch in 0..a.channels() {
            out.push(TrainingSample {
                first: a.channel(ch),
                middle: b.channel(ch),
                last: c.channel(ch),
            });
        }
    }
    Ok(out)
}

/// Parameters of the translating-texture dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub count: usize,
    pub size: usize,
    /// Range of the displacement between the two outer frames, in pixels.
    pub min_shift: f64,
    pub max_shift: f64,
    /// Highest plane-wave frequency of the textures (radians per pixel).
    pub max_frequency: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            count: 512,
            size: 64,
            min_shift: 0.0,
            max_shift: 10.0,
            max_frequency: 0.6 * PI,
            seed: 0,
        }
    }
}

/// Renders one triple of a texture translating by `(dy, dx)` between the
/// outer frames; the middle frame sits halfway.
pub fn translating_triplet(texture: &Texture, size: usize, dy: f64, dx: f64) -> [Image; 3] {
    let offset = size as f64 / 2.0;
    let frame = |t: f64| texture.render(size, size, offset, offset, t * dy, t * dx);
    [frame(-0.5), frame(0.0), frame(0.5)]
}

/// Independent translating-texture triples with random directions and
/// shift magnitudes drawn uniformly from the configured range.
pub fn synthetic_triplets(config: &SyntheticConfig) -> Result<TripletDataset> {
    if config.count == 0 || config.size < 4 || config.min_shift > config.max_shift {
        return Err(Error::InvalidConfig(format!("bad synthetic dataset {config:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sequences = (0..config.count)
        .map(|_| {
            let texture = Texture::random(&mut rng, 2.0 * config.size as f64, config.max_frequency);
            let magnitude = rng.random_range(config.min_shift..=config.max_shift);
            let angle = rng.random::<f64>() * 2.0 * PI;
            translating_triplet(&texture, config.size, magnitude * angle.sin(), magnitude * angle.cos()).to_vec()
        })
        .collect();
    TripletDataset::from_sequences(sequences)
}
