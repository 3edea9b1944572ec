//! Image containers, color conversions, resampling and convolution.
//!
//! Images are planar: channel `c` occupies `samples[c*w*h .. (c+1)*w*h]`, each
//! plane stored row-major. RGB images carry samples in `[0, 1]`; images in
//! other color spaces carry that space's native ranges (see [`ColorSpace`]).

mod color;
pub(crate) mod kernel;
mod resample;
pub mod synth;

use std::path::Path;

use image::{ImageBuffer as RasterBuffer, ImageEncoder, Luma, Rgb};

pub use color::{from_color_space, luma, to_color_space, ColorSpace};
pub use kernel::{convolve, convolve_separable, gaussian_1d, gaussian_taps, Border, Kernel2D};
pub use resample::{resample, resize_and_crop, Interpolation};
pub(crate) use resample::cubic as resample_cubic;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Width × height resolution every reference is brought to before distortion.
pub const TARGET_WIDTH: usize = 512;
pub const TARGET_HEIGHT: usize = 384;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T> {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<T>,
}

impl<T: Scalar> ImageBuffer<T> {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedChannels {
                operation: "image construction",
                channels,
            });
        }
        if samples.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height}x{channels} image",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image samples must be finite"));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    /// Constant image.
    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    /// Builds an image from `f(x, y, c)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    samples.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, samples)
    }

    /// Assembles an image from equally sized single-channel planes.
    pub fn from_planes(width: usize, height: usize, planes: Vec<Vec<T>>) -> Result<Self> {
        let channels = planes.len();
        let samples = planes.into_iter().flatten().collect();
        Self::new(width, height, channels, samples)
    }

    pub(crate) fn from_raw_unchecked(
        width: usize,
        height: usize,
        channels: usize,
        samples: Vec<T>,
    ) -> Self {
        debug_assert_eq!(samples.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            samples,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [T] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.pixel_count();
        &self.samples[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.pixel_count();
        &mut self.samples[c * n..(c + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[T]> {
        self.samples.chunks_exact(self.pixel_count())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.samples[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        self.samples[(c * self.height + y) * self.width + x] = v;
    }

    /// Applies `f` to every sample.
    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self::from_raw_unchecked(
            self.width,
            self.height,
            self.channels,
            self.samples.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Clamps every sample into `[0, 1]`.
    pub fn clamp01(mut self) -> Self {
        for v in &mut self.samples {
            *v = v.max(T::zero()).min(T::one());
        }
        self
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn is_constant(&self) -> bool {
        self.samples.windows(2).all(|w| w[0] == w[1])
    }

    /// Copy of the rectangle `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(w, h, self.channels, |x, y, c| {
            self.get(x0 + x, y0 + y, c)
        })
        .expect("crop of a valid image is valid"))
    }

    pub fn cast<U: Scalar>(&self) -> ImageBuffer<U> {
        ImageBuffer::from_raw_unchecked(
            self.width,
            self.height,
            self.channels,
            self.samples
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(0.0)).unwrap_or_else(U::zero))
                .collect(),
        )
    }

    /// Converts 8-bit samples by `v / 255`.
    pub fn from_rgb8(width: usize, height: usize, interleaved: &[u8]) -> Result<Self> {
        if interleaved.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for a {width}x{height} RGB image",
                interleaved.len()
            )));
        }
        let n = width * height;
        let scale = lit::<T>(255.0);
        let mut samples = vec![T::zero(); n * 3];
        for (i, px) in interleaved.chunks_exact(3).enumerate() {
            for c in 0..3 {
                samples[c * n + i] = T::from_u8(px[c]).unwrap() / scale;
            }
        }
        Self::new(width, height, 3, samples)
    }

    /// Interleaved 8-bit samples, `round(v * 255)` after clamping to `[0, 1]`.
    /// Gray images are replicated into three channels.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.pixel_count();
        let mut out = Vec::with_capacity(n * 3);
        for i in 0..n {
            for c in 0..3 {
                let src = if self.channels == 1 { 0 } else { c };
                out.push(quantize_u8(self.samples[src * n + i]));
            }
        }
        out
    }

    /// Reads any PNG or JPEG file as an RGB image.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Image(err) => Error::data(path, err.to_string()),
            other => other,
        })
    }

    /// Decodes an in-memory PNG or JPEG stream.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(w as usize, h as usize, img.as_raw())
    }

    /// Writes an 8-bit PNG (RGB, or gray for single-channel images).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            let raw = self.samples.iter().map(|&v| quantize_u8(v)).collect();
            let buf: RasterBuffer<Luma<u8>, Vec<u8>> =
                RasterBuffer::from_raw(w, h, raw).expect("buffer size matches dims");
            buf.write_to(&mut out, image::ImageFormat::Png)?;
        } else {
            let buf: RasterBuffer<Rgb<u8>, Vec<u8>> =
                RasterBuffer::from_raw(w, h, self.to_rgb8()).expect("buffer size matches dims");
            buf.write_to(&mut out, image::ImageFormat::Png)?;
        }
        Ok(out.into_inner())
    }

    /// Baseline JPEG encoding at `quality` (1..=100).
    pub fn encode_jpeg(&self, quality: u8) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let encoder =
            image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality.clamp(1, 100));
        encoder.write_image(
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(out)
    }
}

#[inline]
fn quantize_u8<T: Scalar>(v: T) -> u8 {
    let v = v.to_f64().unwrap_or(0.0).clamp(0.0, 1.0);
    (v * 255.0).round() as u8
}

/// Mean squared error over all samples of two equally shaped images.
pub fn mse<T: Scalar>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<T> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    let sum: T = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(sum / T::from_usize(a.samples.len()).unwrap())
}
