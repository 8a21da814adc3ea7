//! Windowed SSIM statistics, SSIM maps and the MRI (`1 - SSIM`) image.
//!
//! Windows are uniform `N x N` neighbourhoods centred on each pixel. Samples
//! falling outside the image read as zero, so maps have the same size as the
//! inputs. Means divide by `N^2`; deviations and covariance divide by
//! `N^2 - 1`.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{save_image, ImageBuf, DEFAULT_RANGE};

/// Magic bytes at the start of a raw MRI sidecar.
pub const MRI_MAGIC: &[u8; 4] = b"MRI0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    /// Window side length in pixels (odd).
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the pixel values.
    pub dynamic_range: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: DEFAULT_RANGE,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.window < 3 || self.window.is_multiple_of(2) {
            return bad(format!("window must be odd and >= 3, got {}", self.window));
        }
        for (name, k) in [("k1", self.k1), ("k2", self.k2)] {
            if !(k > 0.0 && k < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {k}"));
            }
        }
        if !(self.dynamic_range > 0.0 && self.dynamic_range.is_finite()) {
            return bad(format!(
                "dynamic range must be positive, got {}",
                self.dynamic_range
            ));
        }
        for (name, e) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("{name} must be positive, got {e}"));
            }
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }

    /// Unit exponents, where the product of components collapses to the
    /// two-factor closed form.
    pub fn is_simplified(&self) -> bool {
        self.alpha == 1.0 && self.beta == 1.0 && self.gamma == 1.0
    }

    fn samples(&self) -> f64 {
        (self.window * self.window) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowStats {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_xy: f64,
}

/// Statistics of the zero-padded window centred on `(px, py)` in channel `ch`.
pub fn window_stats(
    x: &ImageBuf,
    y: &ImageBuf,
    px: usize,
    py: usize,
    ch: usize,
    cfg: &SsimConfig,
) -> Result<WindowStats> {
    x.ensure_same_shape(y)?;
    cfg.validate()?;
    let (w, h, c) = x.dims();
    if px >= w || py >= h || ch >= c {
        return Err(Error::InvalidParameter(format!(
            "pixel ({px}, {py}, ch {ch}) outside {}",
            x.shape_string()
        )));
    }
    let r = (cfg.window / 2) as i64;
    let sample = |img: &ImageBuf, xx: i64, yy: i64| {
        if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
            0.0
        } else {
            img.get(xx as usize, yy as usize, ch)
        }
    };
    let mut xs = Vec::with_capacity(cfg.window * cfg.window);
    let mut ys = Vec::with_capacity(cfg.window * cfg.window);
    for dy in -r..=r {
        for dx in -r..=r {
            xs.push(sample(x, px as i64 + dx, py as i64 + dy));
            ys.push(sample(y, px as i64 + dx, py as i64 + dy));
        }
    }
    let n = cfg.samples();
    let mu_x = xs.iter().sum::<f64>() / n;
    let mu_y = ys.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in xs.iter().zip(&ys) {
        vx += (a - mu_x) * (a - mu_x);
        vy += (b - mu_y) * (b - mu_y);
        cov += (a - mu_x) * (b - mu_y);
    }
    Ok(WindowStats {
        mu_x,
        mu_y,
        sigma_x: (vx / (n - 1.0)).sqrt(),
        sigma_y: (vy / (n - 1.0)).sqrt(),
        sigma_xy: cov / (n - 1.0),
    })
}

/// Luminance, contrast and structure comparisons `(l, c, s)`.
pub fn ssim_components(st: &WindowStats, cfg: &SsimConfig) -> (f64, f64, f64) {
    let (c1, c2, c3) = (cfg.c1(), cfg.c2(), cfg.c3());
    let l = (2.0 * st.mu_x * st.mu_y + c1) / (st.mu_x * st.mu_x + st.mu_y * st.mu_y + c1);
    let c = (2.0 * st.sigma_x * st.sigma_y + c2)
        / (st.sigma_x * st.sigma_x + st.sigma_y * st.sigma_y + c2);
    let s = (st.sigma_xy + c3) / (st.sigma_x * st.sigma_y + c3);
    (l, c, s)
}

/// `l^alpha * c^beta * s^gamma`.
pub fn ssim_pixel(st: &WindowStats, cfg: &SsimConfig) -> Result<f64> {
    let (l, c, s) = ssim_components(st, cfg);
    let mut out = 1.0;
    for (name, base, exp) in [("l", l, cfg.alpha), ("c", c, cfg.beta), ("s", s, cfg.gamma)] {
        out *= pow_checked(name, base, exp)?;
    }
    Ok(out)
}

fn pow_checked(name: &str, base: f64, exp: f64) -> Result<f64> {
    if exp == 1.0 {
        return Ok(base);
    }
    if base < 0.0 && exp.fract() != 0.0 {
        return Err(Error::Domain(format!(
            "component {name} = {base} raised to fractional exponent {exp}"
        )));
    }
    Ok(base.powf(exp))
}

/// Closed form valid for unit exponents and `C3 = C2 / 2`.
pub fn ssim_simplified(st: &WindowStats, cfg: &SsimConfig) -> f64 {
    let (c1, c2) = (cfg.c1(), cfg.c2());
    ((2.0 * st.mu_x * st.mu_y + c1) * (2.0 * st.sigma_xy + c2))
        / ((st.mu_x * st.mu_x + st.mu_y * st.mu_y + c1)
            * (st.sigma_x * st.sigma_x + st.sigma_y * st.sigma_y + c2))
}

macro_rules! map_newtype {
    ($name:ident) => {
        impl $name {
            pub fn width(&self) -> usize {
                self.0.width()
            }

            pub fn height(&self) -> usize {
                self.0.height()
            }

            pub fn channels(&self) -> usize {
                self.0.channels()
            }

            pub fn values(&self) -> &[f64] {
                self.0.pixels()
            }

            pub fn as_image(&self) -> &ImageBuf {
                &self.0
            }

            pub fn into_image(self) -> ImageBuf {
                self.0
            }
        }
    };
}

/// Per-pixel, per-channel SSIM scores.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimMap(ImageBuf);

map_newtype!(SsimMap);

impl SsimMap {
    /// Mean over all pixels and channels, summed in index order.
    pub fn mean(&self) -> f64 {
        let v = self.values();
        v.iter().fold(0.0, |acc, &x| acc + x) / v.len() as f64
    }

    /// 8-bit rendering: values clamped to `[0, 1]` and scaled by 255.
    pub fn to_display(&self) -> ImageBuf {
        self.0.map(|v| v.clamp(0.0, 1.0) * 255.0)
    }
}

/// `1 - SSIM` per pixel and channel, unclamped.
#[derive(Clone, Debug, PartialEq)]
pub struct MriImage(ImageBuf);

map_newtype!(MriImage);

impl MriImage {
    pub fn from_image(img: ImageBuf) -> Self {
        MriImage(img)
    }

    /// All-zero MRI, the target for genuine faces.
    pub fn blank(width: usize, height: usize, channels: usize) -> Self {
        MriImage(ImageBuf::filled(width, height, channels, 0.0))
    }

    pub fn to_display(&self) -> ImageBuf {
        self.0.map(|v| v.clamp(0.0, 1.0) * 255.0)
    }
}

/// Raw moment sums over every zero-padded window of one channel.
struct WindowSums {
    x: Vec<f64>,
    y: Vec<f64>,
    xx: Vec<f64>,
    yy: Vec<f64>,
    xy: Vec<f64>,
}

fn box_sum(plane: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut horiz = vec![0.0; w * h];
    horiz.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let src = &plane[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            *out = src[lo..=hi].iter().sum();
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for yy in lo..=hi {
                acc += horiz[yy * w + x];
            }
            *o = acc;
        }
    });
    out
}

fn window_sums(x: &ImageBuf, y: &ImageBuf, ch: usize, r: usize) -> WindowSums {
    let (w, h, c) = x.dims();
    let plane =
        |img: &ImageBuf| -> Vec<f64> { img.pixels().iter().skip(ch).step_by(c).copied().collect() };
    let px = plane(x);
    let py = plane(y);
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    WindowSums {
        x: box_sum(&px, w, h, r),
        y: box_sum(&py, w, h, r),
        xx: box_sum(&prod(&px, &px), w, h, r),
        yy: box_sum(&prod(&py, &py), w, h, r),
        xy: box_sum(&prod(&px, &py), w, h, r),
    }
}

/// SSIM map of two same-shaped images.
pub fn ssim_image(x: &ImageBuf, y: &ImageBuf, cfg: &SsimConfig) -> Result<SsimMap> {
    x.ensure_same_shape(y)?;
    cfg.validate()?;
    let (w, h, c) = x.dims();
    let r = cfg.window / 2;
    let n = cfg.samples();
    let simplified = cfg.is_simplified();
    let mut values = vec![0.0; w * h * c];
    for ch in 0..c {
        let sums = window_sums(x, y, ch, r);
        let scores: Vec<f64> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let mu_x = sums.x[i] / n;
                let mu_y = sums.y[i] / n;
                let var_x = ((sums.xx[i] - sums.x[i] * mu_x) / (n - 1.0)).max(0.0);
                let var_y = ((sums.yy[i] - sums.y[i] * mu_y) / (n - 1.0)).max(0.0);
                let cov = (sums.xy[i] - sums.x[i] * mu_y) / (n - 1.0);
                if simplified {
                    let (c1, c2) = (cfg.c1(), cfg.c2());
                    Ok(((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
                        / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)))
                } else {
                    let st = WindowStats {
                        mu_x,
                        mu_y,
                        sigma_x: var_x.sqrt(),
                        sigma_y: var_y.sqrt(),
                        sigma_xy: cov,
                    };
                    ssim_pixel(&st, cfg)
                }
            })
            .collect::<Result<_>>()?;
        for (i, s) in scores.into_iter().enumerate() {
            values[i * c + ch] = s;
        }
    }
    Ok(SsimMap(ImageBuf::new(w, h, c, values)?))
}

/// Mean SSIM over all pixels and channels.
pub fn ssim_index(x: &ImageBuf, y: &ImageBuf, cfg: &SsimConfig) -> Result<f64> {
    Ok(ssim_image(x, y, cfg)?.mean())
}

pub fn mri_image(x: &ImageBuf, y: &ImageBuf, cfg: &SsimConfig) -> Result<MriImage> {
    let map = ssim_image(x, y, cfg)?;
    Ok(MriImage(map.0.map(|s| 1.0 - s)))
}

/// Saves the clamped 8-bit rendering and, when `raw` is given, the
/// unclamped values as an `MRI0` sidecar.
pub fn export_mri(m: &MriImage, path: impl AsRef<Path>, raw: Option<&Path>) -> Result<()> {
    save_image(&m.to_display(), path)?;
    if let Some(raw) = raw {
        write_mri_raw(m, raw)?;
    }
    Ok(())
}

/// Sidecar layout: `"MRI0"`, then width, height, channels as little-endian
/// `u32`, then row-major interleaved little-endian `f32` values.
pub fn encode_mri_raw(m: &MriImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * m.values().len());
    out.extend_from_slice(MRI_MAGIC);
    for d in [m.width(), m.height(), m.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in m.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_mri_raw(m: &MriImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_mri_raw(m))
        .map_err(|e| Error::io(path, e))
}

pub fn read_mri_raw(path: impl AsRef<Path>) -> Result<MriImage> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_mri_raw(&bytes).map_err(|message| Error::Decode {
        path: path.to_path_buf(),
        message,
    })
}

pub fn decode_mri_raw(bytes: &[u8]) -> std::result::Result<MriImage, String> {
    if bytes.len() < 16 || &bytes[..4] != MRI_MAGIC {
        return Err("missing MRI0 header".into());
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h, c) = (dim(4), dim(8), dim(12));
    let body = &bytes[16..];
    if body.len() != 4 * w * h * c {
        return Err(format!(
            "body holds {} bytes, header {w}x{h}x{c} needs {}",
            body.len(),
            4 * w * h * c
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    ImageBuf::new(w, h, c, values)
        .map(MriImage)
        .map_err(|e| e.to_string())
}
