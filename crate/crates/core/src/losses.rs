//! Evaluative forms of the MRI-GAN objectives.
//!
//! Generator: `cgan + lambda * (tau * l2 + (1 - tau) * per)` where `per` is
//! `sqrt(1 - SSIM)` between generated and target MRIs. Discriminator:
//! `eta * (mean (f - f_hat)^2 + mean (r - r_hat)^2)` over patch grids.
//! Every reduction sums in index order so results are bit-reproducible.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{load_manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::image::load_image;
use crate::jsonl::read_jsonl;
use crate::perceptual::{read_mri_raw, ssim_index, MriImage, SsimConfig};

/// Floor applied inside `log(1 - D(G))`.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Mode {
    /// Mean squared pixel difference per sample.
    #[default]
    Mse,
    /// Unsquared Euclidean norm of the per-sample difference.
    Norm,
}

/// Target values of the adversarial patch grids. Defaults to zero = real.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConvention {
    pub real: f64,
    pub fake: f64,
}

impl Default for LabelConvention {
    fn default() -> Self {
        Self {
            real: 0.0,
            fake: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub tau: f64,
    pub eta: f64,
    pub l2_mode: L2Mode,
    pub labels: LabelConvention,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            tau: 0.3,
            eta: 0.5,
            l2_mode: L2Mode::Mse,
            labels: LabelConvention::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eta must be > 0, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// A batch of 2-D score grids of uniform size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    batch: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl PatchGrid {
    pub fn new(batch: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if batch == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidParameter(
                "patch grid dims must be positive".into(),
            ));
        }
        if values.len() != batch * height * width {
            return Err(Error::InvalidParameter(format!(
                "patch grid {batch}x{height}x{width} needs {} values, got {}",
                batch * height * width,
                values.len()
            )));
        }
        Ok(Self {
            batch,
            height,
            width,
            values,
        })
    }

    pub fn filled(batch: usize, height: usize, width: usize, value: f64) -> Self {
        Self::new(batch, height, width, vec![value; batch * height * width]).expect("positive dims")
    }

    /// Builds from nested `[sample][row][col]` grids.
    pub fn from_nested(grids: &[Vec<Vec<f64>>]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty patch grid batch".into()))?;
        let height = first.len();
        let width = first.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(grids.len() * height * width);
        for g in grids {
            if g.len() != height || g.iter().any(|row| row.len() != width) {
                return Err(Error::InvalidParameter(
                    "non-uniform patch grid dims in batch".into(),
                ));
            }
            values.extend(g.iter().flatten());
        }
        Self::new(grids.len(), height, width, values)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn ensure_same_shape(&self, other: &PatchGrid) -> Result<()> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left: format!("{:?}", self.dims()),
                right: format!("{:?}", other.dims()),
            })
        }
    }
}

/// Generated MRIs paired with ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct MriBatch {
    pub generated: Vec<MriImage>,
    pub truth: Vec<MriImage>,
}

impl MriBatch {
    pub fn new(generated: Vec<MriImage>, truth: Vec<MriImage>) -> Result<Self> {
        check_pairs(&generated, &truth)?;
        Ok(Self { generated, truth })
    }

    pub fn len(&self) -> usize {
        self.generated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generated.is_empty()
    }
}

fn check_pairs(generated: &[MriImage], truth: &[MriImage]) -> Result<()> {
    if generated.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            left: format!("{} generated", generated.len()),
            right: format!("{} targets", truth.len()),
        });
    }
    if generated.is_empty() {
        return Err(Error::InvalidParameter("empty MRI batch".into()));
    }
    for (g, t) in generated.iter().zip(truth) {
        g.as_image().ensure_same_shape(t.as_image())?;
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Mean of `log(1 - D(G(x)))` over batch and grid.
pub fn cgan_generator_term(d_on_generated: &PatchGrid) -> Result<f64> {
    if let Some(&p) = d_on_generated
        .values
        .iter()
        .find(|p| !(0.0..=1.0).contains(*p))
    {
        return Err(Error::InvalidParameter(format!(
            "discriminator score {p} outside [0, 1]"
        )));
    }
    Ok(mean(
        d_on_generated
            .values
            .iter()
            .map(|&p| (1.0 - p).max(LOG_EPS).ln()),
    ))
}

pub fn l2_term(b: &MriBatch, mode: L2Mode) -> Result<f64> {
    check_pairs(&b.generated, &b.truth)?;
    Ok(mean(b.generated.iter().zip(&b.truth).map(|(g, t)| {
        let sq = g
            .values()
            .iter()
            .zip(t.values())
            .fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b));
        match mode {
            L2Mode::Mse => sq / g.values().len() as f64,
            L2Mode::Norm => sq.sqrt(),
        }
    })))
}

/// `sqrt(1 - ssim)`, with negative arguments floored at zero.
pub fn perceptual_from_index(ssim: f64) -> f64 {
    (1.0 - ssim).max(0.0).sqrt()
}

pub fn perceptual_term(b: &MriBatch, cfg: &SsimConfig) -> Result<f64> {
    check_pairs(&b.generated, &b.truth)?;
    let per = b
        .generated
        .iter()
        .zip(&b.truth)
        .map(|(g, t)| ssim_index(g.as_image(), t.as_image(), cfg).map(perceptual_from_index))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(per.into_iter()))
}

pub fn generator_loss(cgan: f64, l2: f64, per: f64, cfg: &LossConfig) -> f64 {
    // distributed form: the slopes in l2 and per are exactly lambda*tau and
    // lambda*(1-tau)
    let w_l2 = cfg.lambda * cfg.tau;
    let w_per = cfg.lambda * (1.0 - cfg.tau);
    cgan + (w_l2 * l2 + w_per * per)
}

pub fn discriminator_loss(
    fake_targets: &PatchGrid,
    fake_preds: &PatchGrid,
    real_targets: &PatchGrid,
    real_preds: &PatchGrid,
    cfg: &LossConfig,
) -> Result<f64> {
    fake_targets.ensure_same_shape(fake_preds)?;
    real_targets.ensure_same_shape(real_preds)?;
    let mse = |t: &PatchGrid, p: &PatchGrid| {
        mean(
            t.values
                .iter()
                .zip(&p.values)
                .map(|(a, b)| (a - b) * (a - b)),
        )
    };
    Ok(cfg.eta * (mse(fake_targets, fake_preds) + mse(real_targets, real_preds)))
}

/// Mean SSIM index over generated/target pairs (training-progress metric).
pub fn mean_ssim_score(
    generated: &[MriImage],
    truth: &[MriImage],
    cfg: &SsimConfig,
) -> Result<f64> {
    check_pairs(generated, truth)?;
    let scores = generated
        .iter()
        .zip(truth)
        .map(|(g, t)| ssim_index(g.as_image(), t.as_image(), cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(scores.into_iter()))
}

/// One row of the loss-evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub batch: usize,
    pub cgan: f64,
    pub l2: f64,
    pub per: f64,
    #[serde(rename = "total_G")]
    pub total_g: f64,
    #[serde(rename = "total_D")]
    pub total_d: Option<f64>,
    pub mean_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub config: LossConfig,
    pub ssim: SsimConfig,
    pub rows: Vec<LossRow>,
}

/// Discriminator outputs for one batch: on (input, generated MRI) and on
/// (input, ground-truth MRI).
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorOutputs {
    pub on_generated: PatchGrid,
    pub on_real: PatchGrid,
}

/// Evaluates every term for one batch. Without discriminator outputs the
/// adversarial term is zero and `total_D` is absent.
pub fn evaluate_batch(
    batch_idx: usize,
    b: &MriBatch,
    disc: Option<&DiscriminatorOutputs>,
    cfg: &LossConfig,
    ssim_cfg: &SsimConfig,
) -> Result<LossRow> {
    cfg.validate()?;
    let l2 = l2_term(b, cfg.l2_mode)?;
    let per = perceptual_term(b, ssim_cfg)?;
    let mean_ssim = mean_ssim_score(&b.generated, &b.truth, ssim_cfg)?;
    let (cgan, total_d) = match disc {
        Some(d) => {
            let (n, h, w) = d.on_generated.dims();
            let fake_t = PatchGrid::filled(n, h, w, cfg.labels.fake);
            let (n, h, w) = d.on_real.dims();
            let real_t = PatchGrid::filled(n, h, w, cfg.labels.real);
            (
                cgan_generator_term(&d.on_generated)?,
                Some(discriminator_loss(
                    &fake_t,
                    &d.on_generated,
                    &real_t,
                    &d.on_real,
                    cfg,
                )?),
            )
        }
        None => (0.0, None),
    };
    Ok(LossRow {
        batch: batch_idx,
        cgan,
        l2,
        per,
        total_g: generator_loss(cgan, l2, per, cfg),
        total_d,
        mean_ssim,
    })
}

/// SSIM settings for comparing MRIs, whose values live in `[0, 1]`.
pub fn mri_ssim_config() -> SsimConfig {
    SsimConfig {
        dynamic_range: 1.0,
        ..SsimConfig::default()
    }
}

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

/// One predicted MRI dumped by a trainer. `mri_path` is relative to the
/// predictions directory; `.mri` files are raw sidecars, anything else is an
/// image scaled by `1/255`. Discriminator grids are `[row][col]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub item_key: String,
    pub batch: usize,
    pub mri_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_generated: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_real: Option<Vec<Vec<f64>>>,
}

pub fn load_mri_file(path: impl AsRef<Path>) -> Result<MriImage> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "mri") {
        read_mri_raw(path)
    } else {
        Ok(MriImage::from_image(load_image(path)?.map(|v| v / 255.0)))
    }
}

/// Recomputes every loss term for dumped predictions against the
/// manifest's raw targets, one row per batch in ascending batch order.
pub fn evaluate_predictions(
    manifest_path: impl AsRef<Path>,
    predictions_dir: impl AsRef<Path>,
    cfg: &LossConfig,
    ssim_cfg: &SsimConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    ssim_cfg.validate()?;
    let manifest_path = manifest_path.as_ref();
    let manifest_dir = manifest_path.parent().unwrap_or(Path::new(""));
    let entries: BTreeMap<String, ManifestEntry> = load_manifest(manifest_path)?
        .into_iter()
        .map(|e| (e.item_key.clone(), e))
        .collect();
    let pred_dir = predictions_dir.as_ref();
    let records: Vec<PredictionRecord> = read_jsonl(pred_dir.join(PREDICTIONS_FILE))?;
    if records.is_empty() {
        return Err(Error::Data("no predictions".into()));
    }
    let mut batches: BTreeMap<usize, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in &records {
        batches.entry(r.batch).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (batch, recs) in batches {
        let mut generated = Vec::new();
        let mut truth = Vec::new();
        for r in &recs {
            let entry = entries.get(&r.item_key).ok_or_else(|| {
                Error::Data(format!("prediction for unknown item {}", r.item_key))
            })?;
            generated.push(load_mri_file(pred_dir.join(&r.mri_path))?);
            truth.push(read_mri_raw(manifest_dir.join(&entry.mri_raw_path))?);
        }
        let with_d = recs
            .iter()
            .filter(|r| r.d_generated.is_some() && r.d_real.is_some())
            .count();
        let disc = if with_d == recs.len() {
            let gen: Vec<_> = recs
                .iter()
                .map(|r| r.d_generated.clone().expect("checked"))
                .collect();
            let real: Vec<_> = recs
                .iter()
                .map(|r| r.d_real.clone().expect("checked"))
                .collect();
            Some(DiscriminatorOutputs {
                on_generated: PatchGrid::from_nested(&gen)?,
                on_real: PatchGrid::from_nested(&real)?,
            })
        } else if with_d == 0
            && recs
                .iter()
                .all(|r| r.d_generated.is_none() && r.d_real.is_none())
        {
            None
        } else {
            return Err(Error::Data(format!(
                "batch {batch}: discriminator outputs present for only some items"
            )));
        };
        rows.push(evaluate_batch(
            batch,
            &MriBatch::new(generated, truth)?,
            disc.as_ref(),
            cfg,
            ssim_cfg,
        )?);
    }
    Ok(LossReport {
        config: cfg.clone(),
        ssim: ssim_cfg.clone(),
        rows,
    })
}
