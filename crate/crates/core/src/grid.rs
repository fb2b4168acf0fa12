//! Dense row-major 2-D grids and planar multi-channel images.

use num_complex::Complex64;

use crate::error::{shape_err, Error, Result};

/// A dense row-major 2-D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

pub type RealGrid = Grid<f64>;
pub type ComplexGrid = Grid<Complex64>;

impl<T: Copy + Default> Grid<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Grid {
            height,
            width,
            data: vec![T::default(); height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Grid {
            height,
            width,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err(height * width, data.len()));
        }
        Ok(Grid {
            height,
            width,
            data,
        })
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T> Grid<T> {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(shape_err(shape, self.shape()));
        }
        Ok(())
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: T) {
        self.data[y * self.width + x] = value;
    }
}

impl RealGrid {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// A planar image with `channels` planes of `height x width` samples.
///
/// Values loaded from files lie in `[0, 1]`; intermediate results may leave
/// that range until they are clamped for export.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn from_planar(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidConfig("image needs at least one channel".into()));
        }
        if data.len() != height * width * channels {
            return Err(shape_err(height * width * channels, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("image contains non-finite values".into()));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_grid(grid: &RealGrid) -> Self {
        Image {
            height: grid.height(),
            width: grid.width(),
            channels: 1,
            data: grid.as_slice().to_vec(),
        }
    }

    pub fn from_channels(planes: &[RealGrid]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidConfig("no channels".into()))?;
        let (h, w) = first.shape();
        let mut data = Vec::with_capacity(h * w * planes.len());
        for p in planes {
            p.ensure_shape((h, w))?;
            data.extend_from_slice(p.as_slice());
        }
        Ok(Image {
            height: h,
            width: w,
            channels: planes.len(),
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel(&self, c: usize) -> RealGrid {
        Grid::from_vec(self.height, self.width, self.plane(c).to_vec())
            .expect("plane has the image's shape")
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(shape_err(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn clamped(&self) -> Image {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }

    /// Luma (Rec. 601 weights) for 3-channel images; the single plane otherwise.
    pub fn luma(&self) -> RealGrid {
        if self.channels == 3 {
            let n = self.height * self.width;
            let data = (0..n)
                .map(|i| {
                    0.299 * self.data[i] + 0.587 * self.data[n + i] + 0.114 * self.data[2 * n + i]
                })
                .collect();
            Grid::from_vec(self.height, self.width, data).expect("luma shape")
        } else {
            self.channel(0)
        }
    }

    /// Rectangular crop starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(shape_err(
                (self.height, self.width),
                (top + height, left + width),
            ));
        }
        Ok(Image::from_fn(height, width, self.channels, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, self.channels, |c, y, x| {
            self.get(c, y, self.width - 1 - x)
        })
    }

    pub fn flip_vertical(&self) -> Image {
        Image::from_fn(self.height, self.width, self.channels, |c, y, x| {
            self.get(c, self.height - 1 - y, x)
        })
    }

    /// Pixelwise mean of two images.
    pub fn average(a: &Image, b: &Image) -> Result<Image> {
        a.ensure_same_dims(b)?;
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        Ok(Image {
            height: a.height,
            width: a.width,
            channels: a.channels,
            data,
        })
    }
}
