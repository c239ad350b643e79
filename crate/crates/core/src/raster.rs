//! Row-major image and mask buffers shared by the renderer, the mask
//! projector, augmentation and the metrics.
//!
//! Pixel `(x, y)` lives at index `y * width + x`; `x` is the detector `u`
//! coordinate and `y` the detector `v` coordinate.

use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageBuffer, ImageEncoder, Luma, Rgb};

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimMismatch(usize, usize, usize, usize),
    #[error("image I/O error on {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Real-valued single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "buffer does not match dimensions");
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Quantise a `[0, 1]` image to 16 bits: `round(p * 65535)`.
    pub fn to_u16(&self) -> Vec<u16> {
        self.data.iter().map(|&p| (p.clamp(0.0, 1.0) * 65535.0).round() as u16).collect()
    }

    pub fn write_png16(&self, path: &Path) -> Result<(), RasterError> {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.to_u16())
                .expect("buffer size matches dimensions");
        buf.save(path).map_err(|source| RasterError::Image { path: path.display().to_string(), source })
    }

    /// 16-bit grayscale PNG bytes.
    pub fn encode_png16(&self) -> Vec<u8> {
        let bytes: Vec<u8> = self.to_u16().iter().flat_map(|v| v.to_ne_bytes()).collect();
        encode_png(self.width, self.height, &bytes, ExtendedColorType::L16)
    }

    /// Load a 16-bit grayscale PNG back into `[0, 1]`.
    pub fn read_png16(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path)
            .map_err(|source| RasterError::Image { path: path.display().to_string(), source })?
            .into_luma16();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
        Ok(Self::from_vec(w as usize, h as usize, data))
    }
}

/// Binary mask over an image grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![true; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "buffer does not match dimensions");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn check_dims(&self, other: &BinaryMask) -> Result<(), RasterError> {
        if self.dims() != other.dims() {
            return Err(RasterError::DimMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    pub fn or_assign(&mut self, other: &BinaryMask) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    /// Pixels of the mask that have a 4-neighbour outside the mask. Pixels
    /// beyond the image border count as outside.
    pub fn boundary(&self) -> BinaryMask {
        let (w, h) = self.dims();
        BinaryMask::from_fn(w, h, |x, y| {
            if !self.get(x, y) {
                return false;
            }
            x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !self.get(x - 1, y)
                || !self.get(x + 1, y)
                || !self.get(x, y - 1)
                || !self.get(x, y + 1)
        })
    }

    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i % w, i / w))
    }
}

fn encode_png(width: usize, height: usize, bytes: &[u8], color: ExtendedColorType) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(bytes, width as u32, height as u32, color)
        .expect("in-memory PNG encoding of a well-sized buffer");
    out
}

/// 8-bit RGB PNG bytes (row-major, 3 bytes per pixel).
pub fn encode_rgb8(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    encode_png(width, height, rgb, ExtendedColorType::Rgb8)
}

/// Write an 8-bit RGB buffer (row-major, 3 bytes per pixel).
pub fn write_rgb8(path: &Path, width: usize, height: usize, rgb: Vec<u8>) -> Result<(), RasterError> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, rgb).expect("buffer size matches dimensions");
    buf.save(path).map_err(|source| RasterError::Image { path: path.display().to_string(), source })
}
