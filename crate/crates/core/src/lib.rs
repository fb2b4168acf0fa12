//! Phase-based video frame interpolation.
//!
//! The crate decomposes frames with a complex steerable pyramid
//! ([`pyramid`]), predicts the decomposition of the in-between frame with a
//! coarse-to-fine decoder ([`phasenet`]) trained stage by stage
//! ([`trainer`]) on an image plus wrapped-phase objective ([`losses`]), and
//! scores results with PSNR/SSIM under a leave-one-out protocol
//! ([`evalkit`]). A training-free phase-averaging interpolator lives in
//! [`baseline`].

pub mod baseline;
pub mod canvas;
pub mod container;
pub mod error;
pub mod evalkit;
pub mod fft;
pub mod grid;
pub mod imageio;
pub mod losses;
pub mod phasenet;
pub mod pyramid;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{ComplexGrid, Grid, Image, RealGrid};
pub use phasenet::{ArchConfig, NetworkWeights};
pub use pyramid::{Decomposition, FilterBank, PyramidConfig, Subband};
