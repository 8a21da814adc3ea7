//! Seed-deterministic noise, photometric and geometric augmentations.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, ImageBuf};
use crate::seed::SeedSpec;

/// Per-pixel variance for [`AugmentSpec::Localvar`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LocalVariance {
    /// `variance = scale * pixel value`.
    Intensity { scale: f64 },
    /// Explicit map, either `w*h` (shared by channels) or `w*h*c` entries.
    Map { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentSpec {
    /// Additive `N(0, variance)`.
    Gaussian {
        variance: f64,
    },
    /// Multiplicative `v * (1 + N(0, variance))`.
    Speckle {
        variance: f64,
    },
    /// A fraction `amount` of pixels becomes 255 (probability `salt_ratio`)
    /// or 0.
    SaltPepper {
        amount: f64,
        salt_ratio: f64,
    },
    Pepper {
        amount: f64,
    },
    Salt {
        amount: f64,
    },
    /// Each value replaced by a Poisson draw with that mean.
    Poisson,
    Localvar {
        variance: LocalVariance,
    },
    /// Box blur over a `(2r+1)^2` window, edges replicated.
    Blur {
        radius: usize,
    },
    /// Rotation about the centre; exposed corners are black.
    Rotate {
        degrees: f64,
    },
    Hflip,
    /// Bilinear rescale of both dimensions by `factor`.
    Rescale {
        factor: f64,
    },
    /// Additive offset.
    Brightness {
        offset: f64,
    },
    /// Scales deviations from the per-channel mean.
    Contrast {
        factor: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Gaussian,
    Speckle,
    SaltPepper,
    Pepper,
    Salt,
    Poisson,
    Localvar,
    Blur,
    Rotate,
    Hflip,
    Rescale,
    Brightness,
    Contrast,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 13] = [
        AugmentKind::Gaussian,
        AugmentKind::Speckle,
        AugmentKind::SaltPepper,
        AugmentKind::Pepper,
        AugmentKind::Salt,
        AugmentKind::Poisson,
        AugmentKind::Localvar,
        AugmentKind::Blur,
        AugmentKind::Rotate,
        AugmentKind::Hflip,
        AugmentKind::Rescale,
        AugmentKind::Brightness,
        AugmentKind::Contrast,
    ];

    fn default_range(self) -> [f64; 2] {
        match self {
            AugmentKind::Gaussian => [4.0, 64.0],
            AugmentKind::Speckle => [0.005, 0.05],
            AugmentKind::SaltPepper | AugmentKind::Pepper | AugmentKind::Salt => [0.005, 0.05],
            AugmentKind::Localvar => [0.05, 0.5],
            AugmentKind::Blur => [1.0, 2.0],
            AugmentKind::Rotate => [-10.0, 10.0],
            AugmentKind::Rescale => [0.8, 1.2],
            AugmentKind::Brightness => [-30.0, 30.0],
            AugmentKind::Contrast => [0.7, 1.3],
            AugmentKind::Poisson | AugmentKind::Hflip => [0.0, 0.0],
        }
    }
}

impl AugmentSpec {
    pub fn kind(&self) -> AugmentKind {
        match self {
            AugmentSpec::Gaussian { .. } => AugmentKind::Gaussian,
            AugmentSpec::Speckle { .. } => AugmentKind::Speckle,
            AugmentSpec::SaltPepper { .. } => AugmentKind::SaltPepper,
            AugmentSpec::Pepper { .. } => AugmentKind::Pepper,
            AugmentSpec::Salt { .. } => AugmentKind::Salt,
            AugmentSpec::Poisson => AugmentKind::Poisson,
            AugmentSpec::Localvar { .. } => AugmentKind::Localvar,
            AugmentSpec::Blur { .. } => AugmentKind::Blur,
            AugmentSpec::Rotate { .. } => AugmentKind::Rotate,
            AugmentSpec::Hflip => AugmentKind::Hflip,
            AugmentSpec::Rescale { .. } => AugmentKind::Rescale,
            AugmentSpec::Brightness { .. } => AugmentKind::Brightness,
            AugmentSpec::Contrast { .. } => AugmentKind::Contrast,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let unit = |name: &str, v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1], got {v}"
                )))
            }
        };
        match self {
            AugmentSpec::Gaussian { variance } | AugmentSpec::Speckle { variance } => {
                if !(*variance >= 0.0 && variance.is_finite()) {
                    return bad(format!("variance must be >= 0, got {variance}"));
                }
            }
            AugmentSpec::SaltPepper { amount, salt_ratio } => {
                unit("amount", *amount)?;
                unit("salt_ratio", *salt_ratio)?;
            }
            AugmentSpec::Pepper { amount } | AugmentSpec::Salt { amount } => {
                unit("amount", *amount)?
            }
            AugmentSpec::Localvar { variance } => match variance {
                LocalVariance::Intensity { scale } if !(*scale >= 0.0 && scale.is_finite()) => {
                    return bad(format!("localvar scale must be >= 0, got {scale}"));
                }
                LocalVariance::Map { values }
                    if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) =>
                {
                    return bad("localvar map holds a negative or non-finite variance".into());
                }
                _ => {}
            },
            AugmentSpec::Blur { radius } if *radius < 1 => {
                return bad("blur radius must be >= 1".into());
            }
            AugmentSpec::Rotate { degrees } if !degrees.is_finite() => {
                return bad(format!("rotation must be finite, got {degrees}"));
            }
            AugmentSpec::Rescale { factor } if !(*factor > 0.0 && factor.is_finite()) => {
                return bad(format!("rescale factor must be > 0, got {factor}"));
            }
            AugmentSpec::Brightness { offset } if !offset.is_finite() => {
                return bad(format!("brightness offset must be finite, got {offset}"));
            }
            AugmentSpec::Contrast { factor } if !(*factor >= 0.0 && factor.is_finite()) => {
                return bad(format!("contrast factor must be >= 0, got {factor}"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Applies one augmentation. Output is clamped to `[0, 255]`.
pub fn apply_augment(img: &ImageBuf, spec: &AugmentSpec, seed: &SeedSpec) -> Result<ImageBuf> {
    spec.validate()?;
    let mut rng = seed.rng();
    let out = match spec {
        AugmentSpec::Gaussian { variance } => {
            let normal = normal(*variance)?;
            img.map(|v| v + normal.sample(&mut rng))
        }
        AugmentSpec::Speckle { variance } => {
            let normal = normal(*variance)?;
            img.map(|v| v * (1.0 + normal.sample(&mut rng)))
        }
        AugmentSpec::SaltPepper { amount, salt_ratio } => {
            impulse(img, *amount, *salt_ratio, &mut rng)
        }
        AugmentSpec::Pepper { amount } => impulse(img, *amount, 0.0, &mut rng),
        AugmentSpec::Salt { amount } => impulse(img, *amount, 1.0, &mut rng),
        AugmentSpec::Poisson => {
            let mut px = Vec::with_capacity(img.pixels().len());
            for &v in img.pixels() {
                let lambda = v.max(0.0);
                px.push(if lambda == 0.0 {
                    0.0
                } else {
                    Poisson::new(lambda)
                        .map_err(|e| Error::InvalidParameter(e.to_string()))?
                        .sample(&mut rng)
                });
            }
            img.with_pixels(px)?
        }
        AugmentSpec::Localvar { variance } => localvar(img, variance, &mut rng)?,
        AugmentSpec::Blur { radius } => box_blur(img, *radius),
        AugmentSpec::Rotate { degrees } => rotate(img, *degrees),
        AugmentSpec::Hflip => image::hflip(img),
        AugmentSpec::Rescale { factor } => {
            let w = ((img.width() as f64 * factor).round() as usize).max(1);
            let h = ((img.height() as f64 * factor).round() as usize).max(1);
            image::resize(img, w, h)?
        }
        AugmentSpec::Brightness { offset } => img.map(|v| v + offset),
        AugmentSpec::Contrast { factor } => {
            let c = img.channels();
            let n = (img.width() * img.height()) as f64;
            let mut means = vec![0.0; c];
            for (i, &v) in img.pixels().iter().enumerate() {
                means[i % c] += v;
            }
            means.iter_mut().for_each(|m| *m /= n);
            let px = img
                .pixels()
                .iter()
                .enumerate()
                .map(|(i, &v)| (v - means[i % c]) * factor + means[i % c])
                .collect();
            img.with_pixels(px)?
        }
    };
    Ok(out.clamped(0.0, 255.0))
}

fn normal(variance: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, variance.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn impulse(img: &ImageBuf, amount: f64, salt_ratio: f64, rng: &mut impl Rng) -> ImageBuf {
    let mut out = img.clone();
    let c = img.channels();
    for px in out.pixels_mut().chunks_mut(c) {
        if rng.random::<f64>() < amount {
            let v = if rng.random::<f64>() < salt_ratio {
                255.0
            } else {
                0.0
            };
            px.iter_mut().for_each(|p| *p = v);
        }
    }
    out
}

fn localvar(img: &ImageBuf, variance: &LocalVariance, rng: &mut impl Rng) -> Result<ImageBuf> {
    let (w, h, c) = img.dims();
    let var_at = |i: usize, v: f64| -> f64 {
        match variance {
            LocalVariance::Intensity { scale } => scale * v.max(0.0),
            LocalVariance::Map { values } if values.len() == w * h => values[i / c],
            LocalVariance::Map { values } => values[i],
        }
    };
    if let LocalVariance::Map { values } = variance {
        if values.len() != w * h && values.len() != w * h * c {
            return Err(Error::DimensionMismatch {
                left: img.shape_string(),
                right: format!("variance map of {} entries", values.len()),
            });
        }
    }
    let px = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            v + z * var_at(i, v).sqrt()
        })
        .collect();
    img.with_pixels(px)
}

fn box_blur(img: &ImageBuf, radius: usize) -> ImageBuf {
    let (w, h, c) = img.dims();
    let r = radius as i64;
    let k = (2 * radius + 1) as f64;
    let clampi = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let horiz = ImageBuf::from_fn(w, h, c, |x, y, ch| {
        (-r..=r)
            .map(|d| img.get(clampi(x as i64 + d, w), y, ch))
            .sum::<f64>()
            / k
    });
    ImageBuf::from_fn(w, h, c, |x, y, ch| {
        (-r..=r)
            .map(|d| horiz.get(x, clampi(y as i64 + d, h), ch))
            .sum::<f64>()
            / k
    })
}

/// Samples `img` at a real-valued position; `None` outside the pixel grid.
fn bilinear(img: &ImageBuf, sx: f64, sy: f64, ch: usize) -> Option<f64> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if sx < -1e-9 || sy < -1e-9 || sx > w - 1.0 + 1e-9 || sy > h - 1.0 + 1e-9 {
        return None;
    }
    let sx = sx.clamp(0.0, w - 1.0);
    let sy = sy.clamp(0.0, h - 1.0);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let top = img.get(x0, y0, ch) * (1.0 - fx) + img.get(x1, y0, ch) * fx;
    let bottom = img.get(x0, y1, ch) * (1.0 - fx) + img.get(x1, y1, ch) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

fn rotate(img: &ImageBuf, degrees: f64) -> ImageBuf {
    let (w, h, c) = img.dims();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    ImageBuf::from_fn(w, h, c, |x, y, ch| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        // inverse mapping: rotate the destination point by -degrees
        let sx = cos * dx + sin * dy + cx;
        let sy = -sin * dx + cos * dy + cy;
        bilinear(img, sx, sy, ch).unwrap_or(0.0)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub specs: Vec<AugmentSpec>,
    pub seed: SeedSpec,
}

impl AugmentPlan {
    pub fn empty(seed: SeedSpec) -> Self {
        Self {
            specs: Vec::new(),
            seed,
        }
    }

    /// The same specs with noise drawn from a per-frame stream.
    pub fn for_frame(&self, frame_idx: usize) -> AugmentPlan {
        AugmentPlan {
            specs: self.specs.clone(),
            seed: self.seed.child(format!("frame{frame_idx}")),
        }
    }
}

/// Applies the plan's specs left to right.
pub fn compose(img: &ImageBuf, plan: &AugmentPlan) -> Result<ImageBuf> {
    let mut out = img.clone();
    for (i, spec) in plan.specs.iter().enumerate() {
        out = apply_augment(&out, spec, &plan.seed.child(format!("step{i}")))?;
    }
    Ok(out)
}

/// One selectable augmentation in a [`PlanPolicy`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub kind: AugmentKind,
    /// Independent inclusion probability.
    pub probability: f64,
    /// Range for the kind's main parameter; a per-kind default when absent.
    #[serde(default)]
    pub range: Option<[f64; 2]>,
    /// Salt share for `salt_pepper` (default 0.5).
    #[serde(default)]
    pub salt_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanPolicy {
    #[serde(default)]
    pub min_count: usize,
    #[serde(default = "default_max_count")]
    pub max_count: usize,
    pub candidates: Vec<Candidate>,
}

fn default_max_count() -> usize {
    usize::MAX
}

impl Default for PlanPolicy {
    fn default() -> Self {
        Self {
            min_count: 1,
            max_count: 3,
            candidates: AugmentKind::ALL
                .iter()
                .map(|&kind| Candidate {
                    kind,
                    probability: 0.15,
                    range: None,
                    salt_ratio: None,
                })
                .collect(),
        }
    }
}

impl PlanPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.min_count > self.max_count {
            return Err(Error::InvalidParameter(format!(
                "min_count {} exceeds max_count {}",
                self.min_count, self.max_count
            )));
        }
        if self.min_count > self.candidates.len() {
            return Err(Error::InvalidParameter(format!(
                "policy requires {} specs but offers {} candidates",
                self.min_count,
                self.candidates.len()
            )));
        }
        for cand in &self.candidates {
            if !(0.0..=1.0).contains(&cand.probability) {
                return Err(Error::InvalidParameter(format!(
                    "{:?} probability {} outside [0, 1]",
                    cand.kind, cand.probability
                )));
            }
            if let Some([lo, hi]) = cand.range {
                if lo.partial_cmp(&hi).is_none_or(|o| o.is_gt()) {
                    return Err(Error::InvalidParameter(format!(
                        "{:?} range [{lo}, {hi}] is empty",
                        cand.kind
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Draws a reproducible plan: each candidate is included independently with
/// its probability, then the selection is padded up to `min_count` (weighted
/// by probability) or trimmed down to `max_count` (uniformly).
pub fn random_plan(seed: &SeedSpec, policy: &PlanPolicy) -> Result<AugmentPlan> {
    policy.validate()?;
    let mut rng = seed.child("plan").rng();
    let mut chosen: Vec<usize> = Vec::new();
    let mut rest: Vec<usize> = Vec::new();
    for (i, cand) in policy.candidates.iter().enumerate() {
        if rng.random::<f64>() < cand.probability {
            chosen.push(i);
        } else {
            rest.push(i);
        }
    }
    while chosen.len() < policy.min_count {
        let total: f64 = rest.iter().map(|&i| policy.candidates[i].probability).sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = rest.len() - 1;
            for (j, &i) in rest.iter().enumerate() {
                u -= policy.candidates[i].probability;
                if u < 0.0 {
                    pick = j;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..rest.len())
        };
        chosen.push(rest.remove(pick));
    }
    if chosen.len() > policy.max_count {
        chosen.shuffle(&mut rng);
        chosen.truncate(policy.max_count);
    }
    chosen.sort_unstable();
    let specs = chosen
        .into_iter()
        .map(|i| instantiate(&policy.candidates[i], &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(AugmentPlan {
        specs,
        seed: seed.clone(),
    })
}

fn instantiate(cand: &Candidate, rng: &mut impl Rng) -> Result<AugmentSpec> {
    let [lo, hi] = cand.range.unwrap_or_else(|| cand.kind.default_range());
    let v = if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    let spec = match cand.kind {
        AugmentKind::Gaussian => AugmentSpec::Gaussian { variance: v },
        AugmentKind::Speckle => AugmentSpec::Speckle { variance: v },
        AugmentKind::SaltPepper => AugmentSpec::SaltPepper {
            amount: v,
            salt_ratio: cand.salt_ratio.unwrap_or(0.5),
        },
        AugmentKind::Pepper => AugmentSpec::Pepper { amount: v },
        AugmentKind::Salt => AugmentSpec::Salt { amount: v },
        AugmentKind::Poisson => AugmentSpec::Poisson,
        AugmentKind::Localvar => AugmentSpec::Localvar {
            variance: LocalVariance::Intensity { scale: v },
        },
        AugmentKind::Blur => AugmentSpec::Blur {
            radius: (v.round() as usize).max(1),
        },
        AugmentKind::Rotate => AugmentSpec::Rotate { degrees: v },
        AugmentKind::Hflip => AugmentSpec::Hflip,
        AugmentKind::Rescale => AugmentSpec::Rescale { factor: v },
        AugmentKind::Brightness => AugmentSpec::Brightness { offset: v },
        AugmentKind::Contrast => AugmentSpec::Contrast { factor: v },
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seed(key: &str) -> SeedSpec {
        SeedSpec::new(99, key)
    }

    fn textured(w: usize, h: usize, c: usize) -> ImageBuf {
        ImageBuf::from_fn(w, h, c, |x, y, ch| {
            let fx = x as f64 / w as f64;
            let fy = y as f64 / h as f64;
            127.5 + 100.0 * (6.0 * fx + 3.0 * fy + ch as f64).sin() * (4.0 * fy).cos()
        })
    }

    #[test]
    fn hflip_twice_is_identity() {
        let img = textured(17, 9, 3);
        let plan = AugmentPlan {
            specs: vec![AugmentSpec::Hflip, AugmentSpec::Hflip],
            seed: seed("x"),
        };
        assert_eq!(compose(&img, &plan).unwrap(), img);
    }

    #[test]
    fn empty_plan_is_identity() {
        let img = textured(8, 8, 1);
        assert_eq!(compose(&img, &AugmentPlan::empty(seed("e"))).unwrap(), img);
    }

    #[test]
    fn full_salt_whitens() {
        let out = apply_augment(
            &textured(20, 20, 3),
            &AugmentSpec::Salt { amount: 1.0 },
            &seed("s"),
        )
        .unwrap();
        assert!(out.pixels().iter().all(|&v| v == 255.0));
        let out = apply_augment(
            &textured(20, 20, 1),
            &AugmentSpec::Pepper { amount: 1.0 },
            &seed("p"),
        )
        .unwrap();
        assert!(out.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_sample_statistics() {
        let img = ImageBuf::filled(256, 256, 1, 128.0);
        let out =
            apply_augment(&img, &AugmentSpec::Gaussian { variance: 100.0 }, &seed("g")).unwrap();
        let n = out.pixels().len() as f64;
        let diffs: Vec<f64> = out.pixels().iter().map(|v| v - 128.0).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.5, "mean {mean}");
        assert!((var - 100.0).abs() < 10.0, "var {var}");
    }

    #[test]
    fn brightness_then_contrast_on_constant() {
        let img = ImageBuf::filled(6, 6, 3, 100.0);
        let plan = AugmentPlan {
            specs: vec![
                AugmentSpec::Brightness { offset: 10.0 },
                AugmentSpec::Contrast { factor: 1.0 },
            ],
            seed: seed("bc"),
        };
        let out = compose(&img, &plan).unwrap();
        assert!(out.pixels().iter().all(|&v| (v - 110.0).abs() < 1e-12));
    }

    #[test]
    fn contrast_zero_flattens_to_mean() {
        let img = ImageBuf::new(2, 1, 1, vec![50.0, 150.0]).unwrap();
        let out = apply_augment(&img, &AugmentSpec::Contrast { factor: 0.0 }, &seed("c")).unwrap();
        assert_eq!(out.pixels(), &[100.0, 100.0]);
    }

    #[test]
    fn rescale_changes_dims() {
        let out = apply_augment(
            &textured(20, 10, 3),
            &AugmentSpec::Rescale { factor: 1.5 },
            &seed("r"),
        )
        .unwrap();
        assert_eq!(out.dims(), (30, 15, 3));
    }

    #[test]
    fn rotate_zero_is_identity_and_keeps_dims() {
        let img = textured(15, 11, 3);
        let out = apply_augment(&img, &AugmentSpec::Rotate { degrees: 0.0 }, &seed("r0")).unwrap();
        assert_eq!(out, img);
        let out = apply_augment(&img, &AugmentSpec::Rotate { degrees: 33.0 }, &seed("r1")).unwrap();
        assert_eq!(out.dims(), img.dims());
        assert_eq!(out.get(0, 0, 0), 0.0, "corner exposed by rotation is black");
    }

    #[test]
    fn rotate_round_trip_inside_inscribed_disc() {
        let img = textured(64, 64, 1);
        for deg in [5.0, 10.0, 30.0] {
            let there =
                apply_augment(&img, &AugmentSpec::Rotate { degrees: deg }, &seed("a")).unwrap();
            let back =
                apply_augment(&there, &AugmentSpec::Rotate { degrees: -deg }, &seed("b")).unwrap();
            let (mut sum, mut n) = (0.0, 0usize);
            for y in 0..64 {
                for x in 0..64 {
                    let (dx, dy) = (x as f64 - 31.5, y as f64 - 31.5);
                    if (dx * dx + dy * dy).sqrt() < 30.0 {
                        sum += (back.get(x, y, 0) - img.get(x, y, 0)).abs();
                        n += 1;
                    }
                }
            }
            let mad = sum / n as f64;
            assert!(mad < 2.0, "rotate {deg}: mean abs diff {mad}");
        }
    }

    #[test]
    fn blur_preserves_constants_and_smooths() {
        let k = ImageBuf::filled(9, 9, 3, 77.0);
        let out = apply_augment(&k, &AugmentSpec::Blur { radius: 2 }, &seed("b")).unwrap();
        assert!(out.pixels().iter().all(|&v| (v - 77.0).abs() < 1e-12));
        let mut spike = ImageBuf::filled(5, 5, 1, 0.0);
        spike.set(2, 2, 0, 225.0);
        let out = apply_augment(&spike, &AugmentSpec::Blur { radius: 1 }, &seed("b")).unwrap();
        assert!((out.get(2, 2, 0) - 25.0).abs() < 1e-12);
        assert!((out.get(1, 1, 0) - 25.0).abs() < 1e-12);
        assert_eq!(out.get(0, 0, 0), 0.0);
    }

    #[test]
    fn poisson_keeps_zero_and_is_unbiased() {
        let out = apply_augment(
            &ImageBuf::filled(10, 10, 1, 0.0),
            &AugmentSpec::Poisson,
            &seed("p"),
        )
        .unwrap();
        assert!(out.pixels().iter().all(|&v| v == 0.0));
        let out = apply_augment(
            &ImageBuf::filled(100, 100, 1, 50.0),
            &AugmentSpec::Poisson,
            &seed("p"),
        )
        .unwrap();
        let mean = out.pixels().iter().sum::<f64>() / 1e4;
        // sd of the mean is sqrt(50 / 1e4) ~ 0.07
        assert!((mean - 50.0).abs() < 0.3, "{mean}");
        assert!(out.pixels().iter().all(|v| v.fract() == 0.0));
    }

    #[test]
    fn localvar_map_and_intensity() {
        let img = ImageBuf::filled(4, 4, 1, 100.0);
        let zero = AugmentSpec::Localvar {
            variance: LocalVariance::Map {
                values: vec![0.0; 16],
            },
        };
        assert_eq!(apply_augment(&img, &zero, &seed("l")).unwrap(), img);
        let wrong = AugmentSpec::Localvar {
            variance: LocalVariance::Map {
                values: vec![1.0; 5],
            },
        };
        assert!(matches!(
            apply_augment(&img, &wrong, &seed("l")),
            Err(Error::DimensionMismatch { .. })
        ));
        let black = ImageBuf::filled(4, 4, 1, 0.0);
        let intensity = AugmentSpec::Localvar {
            variance: LocalVariance::Intensity { scale: 1.0 },
        };
        assert_eq!(
            apply_augment(&black, &intensity, &seed("l")).unwrap(),
            black
        );
    }

    #[test]
    fn invalid_parameters_rejected() {
        let img = textured(4, 4, 1);
        for spec in [
            AugmentSpec::Gaussian { variance: -1.0 },
            AugmentSpec::Salt { amount: 1.5 },
            AugmentSpec::SaltPepper {
                amount: 0.1,
                salt_ratio: -0.1,
            },
            AugmentSpec::Blur { radius: 0 },
            AugmentSpec::Rescale { factor: 0.0 },
            AugmentSpec::Rotate { degrees: f64::NAN },
        ] {
            assert!(
                matches!(
                    apply_augment(&img, &spec, &seed("x")),
                    Err(Error::InvalidParameter(_))
                ),
                "{spec:?}"
            );
        }
    }

    #[test]
    fn impulse_fraction_within_three_sigma() {
        let img = ImageBuf::filled(100, 100, 1, 128.0);
        for (amount, spec) in [
            (
                0.1,
                AugmentSpec::SaltPepper {
                    amount: 0.1,
                    salt_ratio: 0.5,
                },
            ),
            (0.3, AugmentSpec::Salt { amount: 0.3 }),
            (0.05, AugmentSpec::Pepper { amount: 0.05 }),
        ] {
            let out = apply_augment(&img, &spec, &seed("imp")).unwrap();
            let altered = out.pixels().iter().filter(|&&v| v != 128.0).count() as f64;
            let n: f64 = 1e4;
            let sigma = (n * amount * (1.0 - amount)).sqrt();
            assert!(
                (altered - n * amount).abs() <= 3.0 * sigma,
                "{spec:?}: {altered}"
            );
        }
    }

    #[test]
    fn spec_json_shape() {
        let spec: AugmentSpec =
            serde_json::from_str(r#"{"kind":"salt_pepper","amount":0.1,"salt_ratio":0.3}"#)
                .unwrap();
        assert_eq!(
            spec,
            AugmentSpec::SaltPepper {
                amount: 0.1,
                salt_ratio: 0.3
            }
        );
        let spec: AugmentSpec = serde_json::from_str(r#"{"kind":"hflip"}"#).unwrap();
        assert_eq!(spec.kind(), AugmentKind::Hflip);
    }

    #[test]
    fn plan_is_reproducible() {
        let policy = PlanPolicy::default();
        let a = random_plan(&seed("video3"), &policy).unwrap();
        let b = random_plan(&seed("video3"), &policy).unwrap();
        assert_eq!(a, b);
        assert!((1..=3).contains(&a.specs.len()));
    }

    #[test]
    fn plan_exact_count() {
        let policy = PlanPolicy {
            min_count: 2,
            max_count: 2,
            ..PlanPolicy::default()
        };
        for i in 0..200 {
            assert_eq!(
                random_plan(&seed(&format!("v{i}")), &policy)
                    .unwrap()
                    .specs
                    .len(),
                2
            );
        }
    }

    #[test]
    fn plan_rejects_impossible_policy() {
        let policy = PlanPolicy {
            min_count: 1,
            max_count: 3,
            candidates: vec![],
        };
        assert!(random_plan(&seed("x"), &policy).is_err());
    }

    #[test]
    fn plan_selection_frequencies() {
        let probs = [0.1, 0.25, 0.5, 0.8];
        let kinds = [
            AugmentKind::Gaussian,
            AugmentKind::Blur,
            AugmentKind::Hflip,
            AugmentKind::Salt,
        ];
        let policy = PlanPolicy {
            min_count: 0,
            max_count: usize::MAX,
            candidates: kinds
                .iter()
                .zip(probs)
                .map(|(&kind, probability)| Candidate {
                    kind,
                    probability,
                    range: None,
                    salt_ratio: None,
                })
                .collect(),
        };
        let n = 10_000;
        let mut counts = [0usize; 4];
        for i in 0..n {
            let plan = random_plan(&seed(&format!("v{i}")), &policy).unwrap();
            for spec in &plan.specs {
                counts[kinds.iter().position(|&k| k == spec.kind()).unwrap()] += 1;
            }
        }
        for (count, p) in counts.iter().zip(probs) {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (*count as f64 - n as f64 * p).abs() <= 3.0 * sigma,
                "p={p}: {count}"
            );
        }
    }

    #[test]
    fn per_frame_plans_share_specs_but_not_noise() {
        let plan = AugmentPlan {
            specs: vec![AugmentSpec::Gaussian { variance: 25.0 }],
            seed: seed("video9"),
        };
        let img = ImageBuf::filled(8, 8, 1, 100.0);
        let f0 = compose(&img, &plan.for_frame(0)).unwrap();
        let f1 = compose(&img, &plan.for_frame(10)).unwrap();
        assert_eq!(plan.for_frame(0).specs, plan.for_frame(10).specs);
        assert_ne!(f0, f1);
        assert_eq!(f0, compose(&img, &plan.for_frame(0)).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn outputs_stay_in_range_and_are_deterministic(kind_idx in 0usize..13, key in "[a-z]{1,8}") {
            let img = textured(16, 12, 3);
            let policy = PlanPolicy {
                min_count: 1,
                max_count: 1,
                candidates: vec![Candidate {
                    kind: AugmentKind::ALL[kind_idx],
                    probability: 1.0,
                    range: None,
                    salt_ratio: None,
                }],
            };
            let plan = random_plan(&SeedSpec::new(5, key), &policy).unwrap();
            let a = compose(&img, &plan).unwrap();
            let b = compose(&img, &plan).unwrap();
            prop_assert!(a.pixels().iter().all(|v| (0.0..=255.0).contains(v)));
            prop_assert_eq!(a, b);
        }
    }
}
