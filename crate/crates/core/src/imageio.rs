//! Lossless raster IO. Pixels are mapped to `[0, 1]`; grey inputs give one
//! channel and colour inputs three (alpha is dropped).

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};
use crate::grid::Image;

/// Sample depth of written files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn from_dynamic(img: DynamicImage) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let colour = img.color().has_color();
    if colour {
        let buf = img.into_rgb32f();
        let mut data = vec![0.0; 3 * h * w];
        for (i, p) in buf.pixels().enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = f64::from(p.0[c]).clamp(0.0, 1.0);
            }
        }
        Image::from_planar(h, w, 3, data)
    } else {
        let buf = img.into_luma16();
        let data = buf.pixels().map(|p| f64::from(p.0[0]) / 65535.0).collect();
        Image::from_planar(h, w, 1, data)
    }
}

/// Reads a raster file.
pub fn read_image(path: &Path) -> Result<Image> {
    let reader = ImageReader::open(path)?
        .with_guessed_format()
        .map_err(|e| decode_err(path, e))?;
    let img = reader.decode().map_err(|e| decode_err(path, e))?;
    from_dynamic(img).map_err(|e| decode_err(path, e))
}

/// Decodes a raster image held in memory.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let img = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| decode_err(Path::new("<memory>"), e))?
        .decode()
        .map_err(|e| decode_err(Path::new("<memory>"), e))?;
    from_dynamic(img)
}

/// Height, width and channel count read from the file header only.
pub fn probe_image(path: &Path) -> Result<(usize, usize, usize)> {
    use image::ImageDecoder;
    let decoder = ImageReader::open(path)?
        .with_guessed_format()
        .map_err(|e| decode_err(path, e))?
        .into_decoder()
        .map_err(|e| decode_err(path, e))?;
    let (w, h) = decoder.dimensions();
    let channels = if decoder.color_type().has_color() { 3 } else { 1 };
    Ok((h as usize, w as usize, channels))
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

fn to_dynamic(image: &Image, depth: BitDepth) -> Result<DynamicImage> {
    let (h, w, c) = image.dims();
    let (wu, hu) = (w as u32, h as u32);
    let px = |ch: usize, i: usize| image.plane(ch)[i];
    let img = match (c, depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(ImageBuffer::from_fn(wu, hu, |x, y| {
            Luma([quantize(px(0, y as usize * w + x as usize), 255.0) as u8])
        })),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(ImageBuffer::from_fn(wu, hu, |x, y| {
            Luma([quantize(px(0, y as usize * w + x as usize), 65535.0) as u16])
        })),
        (3, BitDepth::Eight) => DynamicImage::ImageRgb8(ImageBuffer::from_fn(wu, hu, |x, y| {
            let i = y as usize * w + x as usize;
            Rgb([0, 1, 2].map(|ch| quantize(px(ch, i), 255.0) as u8))
        })),
        (3, BitDepth::Sixteen) => DynamicImage::ImageRgb16(ImageBuffer::from_fn(wu, hu, |x, y| {
            let i = y as usize * w + x as usize;
            Rgb([0, 1, 2].map(|ch| quantize(px(ch, i), 65535.0) as u16))
        })),
        _ => return Err(Error::Encode(format!("cannot store {c} channels"))),
    };
    Ok(img)
}

/// Encodes as PNG. Values are clamped to `[0, 1]` and rounded.
pub fn encode_png(image: &Image, depth: BitDepth) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    to_dynamic(image, depth)?
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out.into_inner())
}
