//! Float image buffers, 8-bit PNG/JPEG I/O and basic geometry.

use std::fmt;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default dynamic range of pixel values.
pub const DEFAULT_RANGE: f64 = 255.0;

/// Row-major, channel-interleaved float image. Pixel domain is `[0, 255]`
/// for decoded images; intermediate results may leave that range.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dims must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::InvalidParameter(format!(
                "pixel buffer length {} != {width}x{height}x{channels}",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite pixel at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
        .expect("valid filled image")
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut pixels = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, pixels).expect("valid generated image")
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

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.pixels[i] = v;
    }

    pub fn same_shape(&self, other: &ImageBuf) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_same_shape(&self, other: &ImageBuf) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left: self.shape_string(),
                right: other.shape_string(),
            })
        }
    }

    /// `"WxHxC"`.
    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> ImageBuf {
        ImageBuf {
            width: self.width,
            height: self.height,
            channels: self.channels,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> ImageBuf {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Rounds half away from zero and clamps to `[0, 255]`.
    pub fn quantized(&self) -> ImageBuf {
        self.map(|v| v.round().clamp(0.0, 255.0))
    }

    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<ImageBuf> {
        ImageBuf::new(self.width, self.height, self.channels, pixels)
    }
}

/// Axis-aligned box, top-left origin. `x`/`y` may be negative (detector
/// boxes sometimes overhang the frame); the extents must be positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self { x, y, w, h }
    }

    /// Intersection with `[0, width) x [0, height)`, `None` when empty.
    pub fn clip(&self, width: usize, height: usize) -> Option<BBox> {
        if self.w <= 0 || self.h <= 0 {
            return None;
        }
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = (self.x + self.w).min(width as i64);
        let y1 = (self.y + self.h).min(height as i64);
        (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x, self.y, self.w, self.h)
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuf> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes).map_err(|e| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            message: format!("{format:?} (only PNG and JPEG are read)"),
        });
    }
    let decoded =
        image::load_from_memory_with_format(&bytes, format).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                message: format!("{:?} (need 8-bit gray or RGB)", other.color()),
            })
        }
    };
    ImageBuf::new(w, h, channels, raw.into_iter().map(f64::from).collect())
}

/// Writes a lossless 8-bit PNG. Values are rounded half away from zero;
/// anything outside `[0, 255]` is rejected.
pub fn save_image(img: &ImageBuf, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(img)?;
    let (w, h) = (img.width as u32, img.height as u32);
    let color = if img.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::save_buffer_with_format(path, &bytes, w, h, color, ImageFormat::Png).map_err(|e| match e
    {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Encode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// 8-bit quantization used by [`save_image`].
pub fn to_bytes(img: &ImageBuf) -> Result<Vec<u8>> {
    img.pixels
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if !(0.0..=255.0).contains(&value) {
                Err(Error::PixelOutOfRange { index, value })
            } else {
                Ok(value.round() as u8)
            }
        })
        .collect()
}

/// Exact sub-rectangle after clipping `bbox` to the image.
pub fn crop(img: &ImageBuf, bbox: BBox) -> Result<ImageBuf> {
    let b = bbox
        .clip(img.width, img.height)
        .ok_or_else(|| Error::EmptyIntersection(bbox.to_string()))?;
    let (x0, y0, w, h) = (b.x as usize, b.y as usize, b.w as usize, b.h as usize);
    let c = img.channels;
    let mut pixels = Vec::with_capacity(w * h * c);
    for y in y0..y0 + h {
        let start = img.index(x0, y, 0);
        pixels.extend_from_slice(&img.pixels[start..start + w * c]);
    }
    ImageBuf::new(w, h, c, pixels)
}

/// Bilinear resize with half-pixel-centre alignment and edge clamping.
pub fn resize(img: &ImageBuf, width: usize, height: usize) -> Result<ImageBuf> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "resize target must be positive, got {width}x{height}"
        )));
    }
    if (width, height) == (img.width, img.height) {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let taps = |dst: usize, scale: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let xs: Vec<_> = (0..width).map(|x| taps(x, sx, img.width)).collect();
    let c = img.channels;
    let mut pixels = Vec::with_capacity(width * height * c);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, sy, img.height);
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = img.get(x0, y0, ch) * (1.0 - fx) + img.get(x1, y0, ch) * fx;
                let bottom = img.get(x0, y1, ch) * (1.0 - fx) + img.get(x1, y1, ch) * fx;
                pixels.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    ImageBuf::new(width, height, c, pixels)
}

/// Horizontal mirror.
pub fn hflip(img: &ImageBuf) -> ImageBuf {
    let w = img.width;
    ImageBuf::from_fn(w, img.height, img.channels, |x, y, c| {
        img.get(w - 1 - x, y, c)
    })
}

/// Replicates a single-channel image into three channels.
pub fn gray_to_rgb(img: &ImageBuf) -> ImageBuf {
    if img.channels == 3 {
        return img.clone();
    }
    ImageBuf::from_fn(img.width, img.height, 3, |x, y, _| img.get(x, y, 0))
}
