//! Paired (face, MRI target) dataset construction and balanced epoch
//! sampling.
//!
//! Output layout under the manifest directory:
//!
//! ```text
//! manifest.jsonl
//! faces/<video>/<frame>_<face>.png   training input crop
//! pairs/<video>/<frame>_<face>.png   reference real crop (fakes only)
//! mri/<video>/<frame>_<face>.{png,mri}
//! mri/blank.{png,mri}                shared all-black target for reals
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{compose, random_plan, PlanPolicy};
use crate::distract::{overlay, random_spec, DistractPolicy, FrameSequence};
use crate::error::{Error, Result};
use crate::image::{crop, load_image, resize, save_image, BBox, ImageBuf};
use crate::jsonl::{read_jsonl, write_file, write_jsonl};
use crate::label::Label;
use crate::perceptual::{export_mri, mri_image, MriImage, SsimConfig};
use crate::seed::SeedSpec;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DEFAULT_STRIDE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusTag {
    Dfdc,
    Celeb,
    Fdf,
    Ffhq,
    Synthetic,
}

impl CorpusTag {
    pub const ALL: [CorpusTag; 5] = [
        CorpusTag::Dfdc,
        CorpusTag::Celeb,
        CorpusTag::Fdf,
        CorpusTag::Ffhq,
        CorpusTag::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorpusTag::Dfdc => "dfdc",
            CorpusTag::Celeb => "celeb",
            CorpusTag::Fdf => "fdf",
            CorpusTag::Ffhq => "ffhq",
            CorpusTag::Synthetic => "synthetic",
        }
    }

    /// Only DFDC videos receive augmentation and distraction.
    pub fn is_augmented(self) -> bool {
        self == CorpusTag::Dfdc
    }
}

impl fmt::Display for CorpusTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CorpusTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorpusTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown corpus tag {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceVideoMeta {
    pub video_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_id: Option<String>,
    pub frame_dir: PathBuf,
    pub corpus: CorpusTag,
}

/// One detected face, as produced by the external detector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub video_id: String,
    pub frame_idx: usize,
    pub face_idx: usize,
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

/// Boxes of one video keyed by `(frame_idx, face_idx)`.
pub type FrameBoxes = BTreeMap<(usize, usize), BBox>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub item_key: String,
    pub video_id: String,
    pub frame_idx: usize,
    pub face_idx: usize,
    pub label: Label,
    pub split: Split,
    pub origin: CorpusTag,
    pub face_path: String,
    pub mri_path: String,
    pub mri_raw_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_id: Option<String>,
    pub augmented: bool,
    pub distracted: bool,
}

pub fn item_key(video_id: &str, frame_idx: usize, face_idx: usize) -> String {
    format!("{video_id}/{frame_idx:05}/{face_idx}")
}

pub fn select_frames(frame_count: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    Ok((0..frame_count).step_by(stride).collect())
}

/// Reads sources; relative `frame_dir`s are resolved against the file's
/// directory.
pub fn load_sources(path: impl AsRef<Path>) -> Result<Vec<SourceVideoMeta>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut sources: Vec<SourceVideoMeta> = read_jsonl(path)?;
    for s in &mut sources {
        if s.frame_dir.is_relative() {
            s.frame_dir = base.join(&s.frame_dir);
        }
    }
    validate_sources(&sources)?;
    Ok(sources)
}

pub fn validate_sources(sources: &[SourceVideoMeta]) -> Result<()> {
    let mut ids = BTreeSet::new();
    for s in sources {
        if !ids.insert(s.video_id.as_str()) {
            return Err(Error::Data(format!("duplicate video_id {}", s.video_id)));
        }
        if s.video_id.is_empty() || s.video_id.contains(['/', '\\']) || s.video_id.starts_with('.')
        {
            return Err(Error::Data(format!(
                "video_id {:?} is not a plain name",
                s.video_id
            )));
        }
    }
    for s in sources {
        match (s.label, &s.original_id) {
            (Label::Real, Some(_)) => {
                return Err(Error::Data(format!(
                    "real video {} carries an original_id",
                    s.video_id
                )))
            }
            (Label::Fake, _) => {
                resolve_original(s, sources)?;
            }
            _ => {}
        }
    }
    Ok(())
}

/// The real video a fake was derived from.
pub fn resolve_original<'a>(
    fake: &SourceVideoMeta,
    sources: &'a [SourceVideoMeta],
) -> Result<&'a SourceVideoMeta> {
    let id = fake
        .original_id
        .as_deref()
        .ok_or_else(|| Error::Data(format!("fake video {} has no original_id", fake.video_id)))?;
    sources
        .iter()
        .find(|s| s.video_id == id && s.label == Label::Real)
        .ok_or_else(|| {
            Error::Data(format!(
                "fake video {}: original {id} not found among real sources",
                fake.video_id
            ))
        })
}

pub fn load_boxes(path: impl AsRef<Path>) -> Result<BTreeMap<String, FrameBoxes>> {
    let records: Vec<BoxRecord> = read_jsonl(path)?;
    group_boxes(&records)
}

pub fn group_boxes(records: &[BoxRecord]) -> Result<BTreeMap<String, FrameBoxes>> {
    let mut out: BTreeMap<String, FrameBoxes> = BTreeMap::new();
    for r in records {
        let prev = out
            .entry(r.video_id.clone())
            .or_default()
            .insert((r.frame_idx, r.face_idx), BBox::new(r.x, r.y, r.w, r.h));
        if prev.is_some() {
            return Err(Error::Data(format!(
                "duplicate box for {}",
                item_key(&r.video_id, r.frame_idx, r.face_idx)
            )));
        }
    }
    Ok(out)
}

/// Frame image files (PNG/JPEG) of a directory in lexicographic order; the
/// position in this list is the frame index.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            frames.push(path);
        }
    }
    frames.sort();
    Ok(frames)
}

/// Loads the frames at `indices`, skipping indices past the end.
pub fn load_frames(dir: impl AsRef<Path>, indices: &[usize]) -> Result<FrameSequence> {
    let files = list_frames(dir)?;
    let mut frames = Vec::new();
    let mut kept = Vec::new();
    for &i in indices {
        if let Some(f) = files.get(i) {
            frames.push(load_image(f)?);
            kept.push(i);
        }
    }
    FrameSequence::new(frames, kept)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FacePair {
    pub frame_idx: usize,
    pub face_idx: usize,
    pub fake: ImageBuf,
    pub real: ImageBuf,
}

fn crop_face(frame: &ImageBuf, bbox: BBox, size: Option<usize>) -> Option<ImageBuf> {
    let c = crop(frame, bbox).ok()?;
    match size {
        Some(s) => resize(&c, s, s).ok(),
        None => Some(c),
    }
}

/// Aligns detections of a fake video and its original by
/// `(frame_idx, face_idx)` over the fake sequence's frames. The fake crop is
/// optionally normalized to `face_size` squared; the real crop is resized to
/// the fake crop's dimensions. Faces detected on only one side are skipped.
pub fn pair_faces(
    fake: &FrameSequence,
    real: &FrameSequence,
    fake_boxes: &FrameBoxes,
    real_boxes: &FrameBoxes,
    face_size: Option<usize>,
) -> Vec<FacePair> {
    let real_at: BTreeMap<usize, &ImageBuf> =
        real.indices().iter().copied().zip(real.frames()).collect();
    let mut pairs = Vec::new();
    for (frame, &frame_idx) in fake.frames().iter().zip(fake.indices()) {
        for (&(_, face_idx), &fb) in fake_boxes.range((frame_idx, 0)..=(frame_idx, usize::MAX)) {
            let key = (frame_idx, face_idx);
            let (Some(real_frame), Some(&rb)) = (real_at.get(&frame_idx), real_boxes.get(&key))
            else {
                log::info!(
                    "frame {frame_idx} face {face_idx}: no matching real detection, skipped"
                );
                continue;
            };
            let Some(fake_crop) = crop_face(frame, fb, face_size) else {
                log::info!(
                    "frame {frame_idx} face {face_idx}: fake box {fb} outside frame, skipped"
                );
                continue;
            };
            let Some(real_crop) = crop_face(real_frame, rb, None)
                .and_then(|c| resize(&c, fake_crop.width(), fake_crop.height()).ok())
            else {
                log::info!(
                    "frame {frame_idx} face {face_idx}: real box {rb} outside frame, skipped"
                );
                continue;
            };
            if real_crop.channels() != fake_crop.channels() {
                log::warn!("frame {frame_idx} face {face_idx}: channel mismatch, skipped");
                continue;
            }
            pairs.push(FacePair {
                frame_idx,
                face_idx,
                fake: fake_crop,
                real: real_crop,
            });
        }
    }
    if pairs.is_empty() {
        log::warn!("no aligned face pairs");
    }
    pairs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildPolicy {
    pub stride: usize,
    /// Side of the square crops written to the dataset.
    pub face_size: usize,
    /// Share of source groups (a real video and its fakes) held out.
    pub test_fraction: f64,
    /// Per-corpus share of videos used; absent corpora are used in full.
    pub include_fraction: BTreeMap<CorpusTag, f64>,
    /// Share of augmentation-eligible videos that receive an augmentation plan.
    pub augment_fraction: f64,
    /// Share of augmentation-eligible videos that receive a distraction.
    pub distract_fraction: f64,
    pub augment: PlanPolicy,
    pub distract: DistractPolicy,
    pub ssim: SsimConfig,
}

impl Default for BuildPolicy {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
            face_size: 256,
            test_fraction: 0.2,
            include_fraction: BTreeMap::new(),
            augment_fraction: 0.5,
            distract_fraction: 0.5,
            augment: PlanPolicy::default(),
            distract: DistractPolicy::default(),
            ssim: SsimConfig::default(),
        }
    }
}

impl BuildPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.face_size == 0 {
            return Err(Error::InvalidParameter(
                "stride and face_size must be positive".into(),
            ));
        }
        let fractions = [
            ("test_fraction", self.test_fraction),
            ("augment_fraction", self.augment_fraction),
            ("distract_fraction", self.distract_fraction),
        ];
        let per_corpus = self
            .include_fraction
            .values()
            .map(|&f| ("include_fraction", f));
        for (name, f) in fractions.into_iter().chain(per_corpus) {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidParameter(format!(
                    "{name} {f} outside [0, 1]"
                )));
            }
        }
        self.augment.validate()?;
        self.ssim.validate()
    }
}

/// `round(fraction * n)` members of `ids` picked by a seeded shuffle,
/// returned as a set.
pub fn select_fraction(ids: &[String], fraction: f64, seed: &SeedSpec) -> BTreeSet<String> {
    let mut sorted = ids.to_vec();
    sorted.sort();
    let k = ((fraction * sorted.len() as f64).round() as usize).min(sorted.len());
    sorted.shuffle(&mut seed.rng());
    sorted.into_iter().take(k).collect()
}

struct VideoJob<'a> {
    meta: &'a SourceVideoMeta,
    original: Option<&'a SourceVideoMeta>,
    split: Split,
    augmented: bool,
    distracted: bool,
}

fn crop_path(dir: &str, video: &str, frame: usize, face: usize, ext: &str) -> String {
    format!("{dir}/{video}/{frame:05}_{face}.{ext}")
}

const BLANK_PNG: &str = "mri/blank.png";
const BLANK_RAW: &str = "mri/blank.mri";
const BLANK_GRAY_PNG: &str = "mri/blank_gray.png";
const BLANK_GRAY_RAW: &str = "mri/blank_gray.mri";

fn blank_paths(channels: usize) -> (&'static str, &'static str) {
    if channels == 1 {
        (BLANK_GRAY_PNG, BLANK_GRAY_RAW)
    } else {
        (BLANK_PNG, BLANK_RAW)
    }
}

fn build_video(
    job: &VideoJob<'_>,
    boxes: &BTreeMap<String, FrameBoxes>,
    policy: &BuildPolicy,
    out_dir: &Path,
    seed: &SeedSpec,
) -> Result<Vec<ManifestEntry>> {
    let meta = job.meta;
    let vseed = seed.child(format!("video/{}", meta.video_id));
    let frame_count = list_frames(&meta.frame_dir)?.len();
    let indices = select_frames(frame_count, policy.stride)?;
    let mut frames = load_frames(&meta.frame_dir, &indices)?;
    if job.distracted && !frames.is_empty() {
        let first = &frames.frames()[0];
        let spec = random_spec(
            &vseed.child("distract"),
            &policy.distract,
            (first.width(), first.height()),
        )?;
        frames = overlay(&frames, &spec, &vseed.child("overlay"))?;
    }
    if job.augmented && !frames.is_empty() {
        let plan = random_plan(&vseed.child("augment"), &policy.augment)?;
        let augmented = frames
            .frames()
            .iter()
            .zip(frames.indices())
            .map(|(f, &i)| compose(f, &plan.for_frame(i)))
            .collect::<Result<Vec<_>>>()?;
        frames = FrameSequence::new(augmented, frames.indices().to_vec())?;
    }
    let empty = FrameBoxes::new();
    let own_boxes = boxes.get(&meta.video_id).unwrap_or(&empty);
    let size = policy.face_size;
    let entry = |frame_idx: usize, face_idx: usize, mri: (String, String), pair: Option<String>| {
        ManifestEntry {
            item_key: item_key(&meta.video_id, frame_idx, face_idx),
            video_id: meta.video_id.clone(),
            frame_idx,
            face_idx,
            label: meta.label,
            split: job.split,
            origin: meta.corpus,
            face_path: crop_path("faces", &meta.video_id, frame_idx, face_idx, "png"),
            mri_path: mri.0,
            mri_raw_path: mri.1,
            pair_path: pair,
            original_id: meta.original_id.clone(),
            augmented: job.augmented,
            distracted: job.distracted,
        }
    };
    let mut entries = Vec::new();
    match job.original {
        None => {
            for (frame, &frame_idx) in frames.frames().iter().zip(frames.indices()) {
                for (&(_, face_idx), &bbox) in
                    own_boxes.range((frame_idx, 0)..=(frame_idx, usize::MAX))
                {
                    let Some(face) = crop_face(frame, bbox, Some(size)) else {
                        log::info!(
                            "{}: box {bbox} outside frame, skipped",
                            item_key(&meta.video_id, frame_idx, face_idx)
                        );
                        continue;
                    };
                    let (png, raw) = blank_paths(face.channels());
                    let e = entry(frame_idx, face_idx, (png.into(), raw.into()), None);
                    save_image(&face.quantized(), out_dir.join(&e.face_path))?;
                    entries.push(e);
                }
            }
        }
        Some(original) => {
            let real = load_frames(&original.frame_dir, frames.indices())?;
            let real_boxes = boxes.get(&original.video_id).unwrap_or(&empty);
            for pair in pair_faces(&frames, &real, own_boxes, real_boxes, Some(size)) {
                let (fi, fa) = (pair.frame_idx, pair.face_idx);
                let fake = pair.fake.quantized();
                let real = pair.real.quantized();
                let mri = match mri_image(&fake, &real, &policy.ssim) {
                    Ok(m) => m,
                    Err(err) => {
                        log::warn!(
                            "{}: MRI failed ({err}), skipped",
                            item_key(&meta.video_id, fi, fa)
                        );
                        continue;
                    }
                };
                let mri_png = crop_path("mri", &meta.video_id, fi, fa, "png");
                let mri_raw = crop_path("mri", &meta.video_id, fi, fa, "mri");
                if let Err(err) =
                    export_mri(&mri, out_dir.join(&mri_png), Some(&out_dir.join(&mri_raw)))
                {
                    log::warn!(
                        "{}: MRI export failed ({err}), skipped",
                        item_key(&meta.video_id, fi, fa)
                    );
                    continue;
                }
                let e = entry(
                    fi,
                    fa,
                    (mri_png, mri_raw),
                    Some(crop_path("pairs", &meta.video_id, fi, fa, "png")),
                );
                save_image(&fake, out_dir.join(&e.face_path))?;
                save_image(
                    &real,
                    out_dir.join(e.pair_path.as_ref().expect("fake entry has a pair")),
                )?;
                entries.push(e);
            }
        }
    }
    if entries.is_empty() {
        log::warn!("video {}: no faces extracted, dropped", meta.video_id);
    }
    Ok(entries)
}

/// Builds the dataset under `out_dir` and writes `manifest.jsonl`. The
/// result depends only on `(sources, boxes, policy, seed)`, not on the
/// worker count.
pub fn build_manifest(
    sources: &[SourceVideoMeta],
    boxes: &BTreeMap<String, FrameBoxes>,
    policy: &BuildPolicy,
    out_dir: impl AsRef<Path>,
    seed: &SeedSpec,
) -> Result<Vec<ManifestEntry>> {
    policy.validate()?;
    validate_sources(sources)?;
    let out_dir = out_dir.as_ref();

    let mut included = BTreeSet::new();
    for corpus in CorpusTag::ALL {
        let ids: Vec<String> = sources
            .iter()
            .filter(|s| s.corpus == corpus)
            .map(|s| s.video_id.clone())
            .collect();
        let fraction = policy.include_fraction.get(&corpus).copied().unwrap_or(1.0);
        included.extend(select_fraction(
            &ids,
            fraction,
            &seed.child(format!("include/{corpus}")),
        ));
    }
    let eligible: Vec<String> = sources
        .iter()
        .filter(|s| s.corpus.is_augmented() && included.contains(&s.video_id))
        .map(|s| s.video_id.clone())
        .collect();
    let augmented = select_fraction(&eligible, policy.augment_fraction, &seed.child("augment"));
    let distracted = select_fraction(&eligible, policy.distract_fraction, &seed.child("distract"));

    let group_of =
        |s: &SourceVideoMeta| s.original_id.clone().unwrap_or_else(|| s.video_id.clone());
    let groups: Vec<String> = sources
        .iter()
        .filter(|s| included.contains(&s.video_id))
        .map(group_of)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let test_groups = select_fraction(&groups, policy.test_fraction, &seed.child("split"));

    let mut jobs = Vec::new();
    for s in sources.iter().filter(|s| included.contains(&s.video_id)) {
        jobs.push(VideoJob {
            meta: s,
            original: match s.label {
                Label::Fake => Some(resolve_original(s, sources)?),
                Label::Real => None,
            },
            split: if test_groups.contains(&group_of(s)) {
                Split::Test
            } else {
                Split::Train
            },
            augmented: augmented.contains(&s.video_id),
            distracted: distracted.contains(&s.video_id),
        });
    }
    let per_video = jobs
        .par_iter()
        .map(|job| build_video(job, boxes, policy, out_dir, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut entries: Vec<ManifestEntry> = per_video.into_iter().flatten().collect();
    entries.sort_by(|a, b| a.item_key.cmp(&b.item_key));

    let mut blank_channels = BTreeSet::new();
    for e in entries.iter().filter(|e| e.label == Label::Real) {
        blank_channels.insert(if e.mri_path == BLANK_GRAY_PNG { 1 } else { 3 });
    }
    for c in blank_channels {
        let (png, raw) = blank_paths(c);
        let blank = MriImage::blank(policy.face_size, policy.face_size, c);
        export_mri(&blank, out_dir.join(png), Some(&out_dir.join(raw)))?;
    }
    write_jsonl(out_dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    read_jsonl(path)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSample {
    pub epoch: usize,
    /// Set when there were fewer reals than fakes and reals were drawn with
    /// replacement.
    pub with_replacement: bool,
    pub indices: Vec<usize>,
}

/// Every fake entry plus an equal number of reals, shuffled. With `split`
/// set, only entries of that split are eligible. Indices refer to positions
/// in `manifest`.
pub fn balanced_epoch_sample(
    manifest: &[ManifestEntry],
    split: Option<Split>,
    epoch: usize,
    seed: &SeedSpec,
) -> Result<EpochSample> {
    let pick = |label: Label| -> Vec<usize> {
        manifest
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label && split.is_none_or(|s| e.split == s))
            .map(|(i, _)| i)
            .collect()
    };
    let fakes = pick(Label::Fake);
    let reals = pick(Label::Real);
    if fakes.is_empty() || reals.is_empty() {
        return Err(Error::Data(format!(
            "epoch sampling needs both classes ({} fake, {} real)",
            fakes.len(),
            reals.len()
        )));
    }
    let mut rng = seed.child(format!("epoch{epoch}")).rng();
    let with_replacement = reals.len() < fakes.len();
    let mut indices = fakes.clone();
    if with_replacement {
        indices.extend((0..fakes.len()).map(|_| reals[rng.random_range(0..reals.len())]));
    } else {
        indices.extend(
            index::sample(&mut rng, reals.len(), fakes.len())
                .into_iter()
                .map(|j| reals[j]),
        );
    }
    indices.shuffle(&mut rng);
    Ok(EpochSample {
        epoch,
        with_replacement,
        indices,
    })
}

pub fn write_epoch_sample(path: impl AsRef<Path>, sample: &EpochSample) -> Result<()> {
    let json = serde_json::to_string_pretty(sample).expect("serializable sample");
    write_file(path, json.as_bytes())
}

pub fn read_epoch_sample(path: impl AsRef<Path>) -> Result<EpochSample> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perceptual::read_mri_raw;
    use crate::synth::{generate_corpus, SynthConfig, BOXES_FILE, SOURCES_FILE};

    fn entry(i: usize, label: Label) -> ManifestEntry {
        ManifestEntry {
            item_key: format!("v{i:04}/00000/0"),
            video_id: format!("v{i:04}"),
            frame_idx: 0,
            face_idx: 0,
            label,
            split: Split::Train,
            origin: CorpusTag::Synthetic,
            face_path: String::new(),
            mri_path: String::new(),
            mri_raw_path: String::new(),
            pair_path: None,
            original_id: None,
            augmented: false,
            distracted: false,
        }
    }

    fn manifest(fakes: usize, reals: usize) -> Vec<ManifestEntry> {
        (0..fakes)
            .map(|i| entry(i, Label::Fake))
            .chain((fakes..fakes + reals).map(|i| entry(i, Label::Real)))
            .collect()
    }

    #[test]
    fn stride_selection() {
        assert_eq!(select_frames(25, 10).unwrap(), vec![0, 10, 20]);
        assert!(select_frames(0, 10).unwrap().is_empty());
        assert_eq!(select_frames(4, 1).unwrap(), vec![0, 1, 2, 3]);
        assert!(select_frames(4, 0).is_err());
    }

    #[test]
    fn epoch_without_replacement() {
        let m = manifest(100, 300);
        let s = balanced_epoch_sample(&m, None, 0, &SeedSpec::new(1, "")).unwrap();
        assert_eq!(s.indices.len(), 200);
        assert!(!s.with_replacement);
        let reals: BTreeSet<usize> = s.indices.iter().copied().filter(|&i| i >= 100).collect();
        assert_eq!(reals.len(), 100);
        let fakes: BTreeSet<usize> = s.indices.iter().copied().filter(|&i| i < 100).collect();
        assert_eq!(fakes.len(), 100);
    }

    #[test]
    fn epoch_with_replacement() {
        let m = manifest(100, 60);
        let s = balanced_epoch_sample(&m, None, 0, &SeedSpec::new(1, "")).unwrap();
        assert_eq!(s.indices.len(), 200);
        assert!(s.with_replacement);
        assert_eq!(s.indices.iter().filter(|&&i| i >= 100).count(), 100);
    }

    #[test]
    fn epoch_determinism() {
        let m = manifest(10, 50);
        let seed = SeedSpec::new(3, "");
        let a = balanced_epoch_sample(&m, None, 4, &seed).unwrap();
        assert_eq!(a, balanced_epoch_sample(&m, None, 4, &seed).unwrap());
        let b = balanced_epoch_sample(&m, None, 5, &seed).unwrap();
        let reals = |s: &EpochSample| {
            s.indices
                .iter()
                .copied()
                .filter(|&i| i >= 10)
                .collect::<BTreeSet<_>>()
        };
        assert_ne!(reals(&a), reals(&b));
        assert!(balanced_epoch_sample(&manifest(3, 0), None, 0, &seed).is_err());
        let dir = tempfile::tempdir().unwrap();
        write_epoch_sample(dir.path().join("e.json"), &a).unwrap();
        assert_eq!(read_epoch_sample(dir.path().join("e.json")).unwrap(), a);
    }

    #[test]
    fn epoch_split_filter() {
        let mut m = manifest(4, 8);
        m[0].split = Split::Test;
        m[5].split = Split::Test;
        let s = balanced_epoch_sample(&m, Some(Split::Train), 0, &SeedSpec::new(1, "")).unwrap();
        assert_eq!(s.indices.len(), 6);
        assert!(!s.indices.contains(&0) && !s.indices.contains(&5));
    }

    #[test]
    fn fraction_selection_is_exact() {
        let ids: Vec<String> = (0..10).map(|i| format!("v{i}")).collect();
        let a = select_fraction(&ids, 0.5, &SeedSpec::new(1, "augment"));
        assert_eq!(a.len(), 5);
        assert_eq!(a, select_fraction(&ids, 0.5, &SeedSpec::new(1, "augment")));
        assert!(select_fraction(&ids, 0.0, &SeedSpec::new(1, "")).is_empty());
        assert_eq!(select_fraction(&ids, 1.0, &SeedSpec::new(1, "")).len(), 10);
    }

    fn seq(frames: Vec<ImageBuf>) -> FrameSequence {
        FrameSequence::from_frames(frames).unwrap()
    }

    fn noise_frame(seed: u64) -> ImageBuf {
        let mut rng = SeedSpec::new(seed, "").rng();
        ImageBuf::from_fn(40, 40, 3, |_, _, _| {
            rng.random_range(0.0..255.0_f64).round()
        })
    }

    #[test]
    fn self_pairing_gives_blank_mri() {
        let s = seq(vec![noise_frame(1), noise_frame(2)]);
        let boxes: FrameBoxes = [
            ((0, 0), BBox::new(5, 5, 20, 20)),
            ((1, 0), BBox::new(3, 4, 25, 30)),
        ]
        .into();
        let pairs = pair_faces(&s, &s, &boxes, &boxes, None);
        assert_eq!(pairs.len(), 2);
        for p in pairs {
            let m = mri_image(&p.fake, &p.real, &SsimConfig::default()).unwrap();
            assert!(m.values().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn unmatched_faces_are_skipped() {
        let s = seq(vec![noise_frame(1)]);
        let fake_boxes: FrameBoxes = [
            ((0, 0), BBox::new(0, 0, 10, 10)),
            ((0, 1), BBox::new(20, 20, 10, 10)),
        ]
        .into();
        let real_boxes: FrameBoxes = [((0, 0), BBox::new(0, 0, 12, 14))].into();
        let pairs = pair_faces(&s, &s, &fake_boxes, &real_boxes, None);
        assert_eq!(pairs.len(), 1);
        assert_eq!(
            (
                pairs[0].face_idx,
                pairs[0].real.width(),
                pairs[0].real.height()
            ),
            (0, 10, 10)
        );
        assert!(pair_faces(&s, &s, &FrameBoxes::new(), &real_boxes, None).is_empty());
    }

    #[test]
    fn unresolvable_original_is_an_error() {
        let fake = SourceVideoMeta {
            video_id: "f".into(),
            label: Label::Fake,
            original_id: Some("missing".into()),
            frame_dir: "x".into(),
            corpus: CorpusTag::Dfdc,
        };
        assert!(resolve_original(&fake, std::slice::from_ref(&fake)).is_err());
        assert!(validate_sources(&[fake]).is_err());
    }

    fn fixture(
        dir: &Path,
        n_videos: usize,
    ) -> (Vec<SourceVideoMeta>, BTreeMap<String, FrameBoxes>) {
        let cfg = SynthConfig {
            n_videos,
            frames_per_video: 10,
            ..SynthConfig::default()
        };
        generate_corpus(&cfg, dir, &SeedSpec::new(11, "corpus")).unwrap();
        (
            load_sources(dir.join(SOURCES_FILE)).unwrap(),
            load_boxes(dir.join(BOXES_FILE)).unwrap(),
        )
    }

    fn small_policy() -> BuildPolicy {
        BuildPolicy {
            face_size: 64,
            ..BuildPolicy::default()
        }
    }

    #[test]
    fn manifest_counts_and_targets() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let (sources, boxes) = fixture(src.path(), 4);
        let m = build_manifest(
            &sources,
            &boxes,
            &small_policy(),
            out.path(),
            &SeedSpec::new(1, ""),
        )
        .unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m, load_manifest(out.path().join(MANIFEST_FILE)).unwrap());
        let keys: Vec<&str> = m.iter().map(|e| e.item_key.as_str()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        for e in &m {
            assert!(out.path().join(&e.face_path).exists());
            let raw = read_mri_raw(out.path().join(&e.mri_raw_path)).unwrap();
            match e.label {
                Label::Real => {
                    assert_eq!(e.mri_path, "mri/blank.png");
                    assert!(raw.values().iter().all(|&v| v == 0.0));
                }
                Label::Fake => {
                    let face = load_image(out.path().join(&e.face_path)).unwrap();
                    let pair = load_image(out.path().join(e.pair_path.as_ref().unwrap())).unwrap();
                    let m = mri_image(&face, &pair, &SsimConfig::default()).unwrap();
                    let want: Vec<f32> = m.values().iter().map(|&v| v as f32).collect();
                    let got: Vec<f32> = raw.values().iter().map(|&v| v as f32).collect();
                    assert_eq!(want, got);
                    assert!(got.iter().any(|&v| v > 0.0));
                }
            }
        }
        let groups: BTreeMap<String, Split> = m
            .iter()
            .map(|e| (e.original_id.clone().unwrap_or(e.video_id.clone()), e.split))
            .collect();
        for e in &m {
            assert_eq!(
                groups[e.original_id.as_ref().unwrap_or(&e.video_id)],
                e.split
            );
        }
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let src = tempfile::tempdir().unwrap();
        let (sources, boxes) = fixture(src.path(), 4);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let seed = SeedSpec::new(2, "");
        build_manifest(&sources, &boxes, &small_policy(), a.path(), &seed).unwrap();
        build_manifest(&sources, &boxes, &small_policy(), b.path(), &seed).unwrap();
        assert_eq!(
            crate::digest::dir_digest(a.path()).unwrap(),
            crate::digest::dir_digest(b.path()).unwrap()
        );
    }

    #[test]
    fn augmentation_is_gated_by_corpus() {
        let src = tempfile::tempdir().unwrap();
        let (mut sources, boxes) = fixture(src.path(), 4);
        let policy = BuildPolicy {
            augment_fraction: 1.0,
            distract_fraction: 1.0,
            ..small_policy()
        };
        let out = tempfile::tempdir().unwrap();
        let m =
            build_manifest(&sources, &boxes, &policy, out.path(), &SeedSpec::new(1, "")).unwrap();
        assert!(m.iter().all(|e| e.augmented && e.distracted));
        for s in &mut sources {
            s.corpus = CorpusTag::Celeb;
        }
        let out = tempfile::tempdir().unwrap();
        let m =
            build_manifest(&sources, &boxes, &policy, out.path(), &SeedSpec::new(1, "")).unwrap();
        assert!(m.iter().all(|e| !e.augmented && !e.distracted));
    }

    #[test]
    fn augment_fraction_selects_exact_count() {
        let src = tempfile::tempdir().unwrap();
        let (sources, boxes) = fixture(src.path(), 10);
        let policy = BuildPolicy {
            augment_fraction: 0.5,
            distract_fraction: 0.0,
            ..small_policy()
        };
        let out = tempfile::tempdir().unwrap();
        let m =
            build_manifest(&sources, &boxes, &policy, out.path(), &SeedSpec::new(4, "")).unwrap();
        let videos: BTreeSet<&str> = m
            .iter()
            .filter(|e| e.augmented)
            .map(|e| e.video_id.as_str())
            .collect();
        assert_eq!(videos.len(), 5);
    }

    #[test]
    fn include_fraction_subsets_corpus() {
        let src = tempfile::tempdir().unwrap();
        let (sources, boxes) = fixture(src.path(), 4);
        let policy = BuildPolicy {
            include_fraction: [(CorpusTag::Dfdc, 0.5)].into(),
            ..small_policy()
        };
        let out = tempfile::tempdir().unwrap();
        let m =
            build_manifest(&sources, &boxes, &policy, out.path(), &SeedSpec::new(4, "")).unwrap();
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn missing_boxes_drop_video() {
        let src = tempfile::tempdir().unwrap();
        let (sources, mut boxes) = fixture(src.path(), 4);
        boxes.remove("fake_000");
        let out = tempfile::tempdir().unwrap();
        let m = build_manifest(
            &sources,
            &boxes,
            &small_policy(),
            out.path(),
            &SeedSpec::new(1, ""),
        )
        .unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.iter().all(|e| e.video_id != "fake_000"));
    }
}
