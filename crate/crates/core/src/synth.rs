//! Procedural images: analytic textures that can be translated by exact
//! sub-pixel amounts, and seeded test images.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::Image;

#[derive(Debug, Clone, Copy)]
struct Wave {
    ky: f64,
    kx: f64,
    amplitude: f64,
    phase: f64,
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    softness: f64,
    amplitude: f64,
}

/// A continuous grey-level texture: a 1/f-weighted sum of plane waves plus a
/// few soft-edged disks, clamped to `[0, 1]`.
///
/// Every pixel is evaluated analytically, so rendering at an offset gives an
/// exact translation with content entering from outside the frame.
#[derive(Debug, Clone)]
pub struct Texture {
    waves: Vec<Wave>,
    blobs: Vec<Blob>,
    base: f64,
}

impl Texture {
    /// Draws a texture for frames of roughly `extent` pixels per side.
    /// `max_frequency` bounds the plane-wave frequencies (radians / pixel).
    pub fn random(rng: &mut impl Rng, extent: f64, max_frequency: f64) -> Self {
        let n_waves = 24;
        let min_frequency = 2.0 * PI / extent;
        let mut waves: Vec<Wave> = (0..n_waves)
            .map(|_| {
                // log-uniform radial frequency, uniform direction
                let t: f64 = rng.random();
                let k = min_frequency * (max_frequency / min_frequency).powf(t);
                let dir = rng.random::<f64>() * PI;
                Wave {
                    ky: k * dir.sin(),
                    kx: k * dir.cos(),
                    amplitude: 1.0 / k.sqrt(),
                    phase: rng.random::<f64>() * 2.0 * PI,
                }
            })
            .collect();
        let norm: f64 = waves.iter().map(|w| w.amplitude).sum();
        for w in &mut waves {
            w.amplitude *= 0.55 / norm;
        }
        let blobs = (0..4)
            .map(|_| Blob {
                cy: rng.random::<f64>() * extent,
                cx: rng.random::<f64>() * extent,
                radius: extent * (0.06 + 0.12 * rng.random::<f64>()),
                softness: 0.6 + 0.8 * rng.random::<f64>(),
                amplitude: if rng.random::<bool>() { 0.18 } else { -0.18 },
            })
            .collect();
        Texture {
            waves,
            blobs,
            base: 0.5,
        }
    }

    pub fn sample(&self, y: f64, x: f64) -> f64 {
        let mut v = self.base;
        for w in &self.waves {
            v += w.amplitude * (w.ky * y + w.kx * x + w.phase).cos();
        }
        for b in &self.blobs {
            let d = (y - b.cy).hypot(x - b.cx);
            v += b.amplitude / (1.0 + ((d - b.radius) / b.softness).exp());
        }
        v.clamp(0.0, 1.0)
    }

    /// Renders the texture translated by `(dy, dx)` pixels, offset by
    /// `(top, left)` in texture coordinates.
    pub fn render(&self, height: usize, width: usize, top: f64, left: f64, dy: f64, dx: f64) -> Image {
        Image::from_fn(height, width, 1, |_, y, x| {
            self.sample(top + y as f64 - dy, left + x as f64 - dx)
        })
    }
}

/// A deterministic natural-looking grey image used as a fixed test fixture.
pub fn natural_image(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = height.max(width) as f64;
    Texture::random(&mut rng, extent, 0.9 * PI).render(height, width, 0.0, 0.0, 0.0, 0.0)
}

/// Uniform i.i.d. noise in `[0, 1]`.
pub fn noise_image(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(height, width, 1, |_, _, _| rng.random::<f64>())
}
