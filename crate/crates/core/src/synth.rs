//! Procedurally drawn stand-in corpus with fake/real video pairs.
//!
//! Real video `real_NNN` shows one drawn face drifting over a textured
//! background. Fake video `fake_NNN` is a copy of it in which the eye/mouth
//! region of the face is redrawn with a different identity on every frame
//! whose index is not `2 mod 3`; the other frames are byte-identical to the
//! original. Both videos share the same face boxes.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{BoxRecord, CorpusTag, SourceVideoMeta};
use crate::detect::VideoLabel;
use crate::error::{Error, Result};
use crate::image::{save_image, BBox, ImageBuf};
use crate::jsonl::write_jsonl;
use crate::label::Label;
use crate::seed::{stable_mix, SeedSpec};

pub const SOURCES_FILE: &str = "sources.jsonl";
pub const BOXES_FILE: &str = "boxes.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Even; half real, half fake.
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub width: usize,
    pub height: usize,
    pub corpus: CorpusTag,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_videos: 8,
            frames_per_video: 10,
            width: 128,
            height: 128,
            corpus: CorpusTag::Dfdc,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_videos < 2 || !self.n_videos.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "n_videos must be even and at least 2, got {}",
                self.n_videos
            )));
        }
        if self.frames_per_video == 0 {
            return Err(Error::InvalidParameter(
                "frames_per_video must be positive".into(),
            ));
        }
        if self.width < 64 || self.height < 64 {
            return Err(Error::InvalidParameter(format!(
                "frames must be at least 64x64, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Per-frame tampering ground truth of a fake video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub video_id: String,
    pub frame_idx: usize,
    pub tampered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<BBox>,
}

pub fn is_tampered_frame(frame_idx: usize) -> bool {
    frame_idx % 3 != 2
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub sources: Vec<SourceVideoMeta>,
    pub boxes: Vec<BoxRecord>,
    pub labels: Vec<VideoLabel>,
    pub truth: Vec<TruthRecord>,
}

#[derive(Clone, Debug)]
struct Identity {
    skin: [f64; 3],
    eye: [f64; 3],
    mouth: [f64; 3],
    eye_radius: f64,
    eye_spread: f64,
    mouth_width: f64,
}

impl Identity {
    fn draw(rng: &mut impl Rng) -> Self {
        let tone = rng.random_range(90.0..200.0);
        Identity {
            skin: [tone + 35.0, tone + 10.0, tone - 15.0],
            eye: [
                rng.random_range(10.0..90.0),
                rng.random_range(40.0..140.0),
                rng.random_range(60.0..200.0),
            ],
            mouth: [
                rng.random_range(120.0..200.0),
                rng.random_range(20.0..70.0),
                rng.random_range(30.0..80.0),
            ],
            eye_radius: rng.random_range(0.11..0.18),
            eye_spread: rng.random_range(0.32..0.45),
            mouth_width: rng.random_range(0.35..0.6),
        }
    }
}

#[derive(Clone, Debug)]
struct Scene {
    key: u64,
    bg: [f64; 3],
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    drift: (f64, f64),
    real: Identity,
    swapped: Identity,
}

/// Deterministic texture value in `[-1, 1)`.
fn texture(key: u64, u: i64, v: i64) -> f64 {
    let h = stable_mix(key, ((u as u64) << 32) ^ (v as u64 & 0xffff_ffff));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

impl Scene {
    fn draw(seed: &SeedSpec, w: usize, h: usize) -> Self {
        let mut rng = seed.rng();
        let (w, h) = (w as f64, h as f64);
        let rx = rng.random_range(0.16..0.22) * w.min(h);
        let ry = rx * 1.25;
        let drift: (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0));
        let margin_x = rx * 1.2 + drift.0.abs() + 2.0;
        let margin_y = ry * 1.2 + drift.1.abs() + 2.0;
        Scene {
            key: seed.derived(),
            bg: [
                rng.random_range(20.0..120.0),
                rng.random_range(20.0..120.0),
                rng.random_range(20.0..120.0),
            ],
            cx: rng.random_range(margin_x..w - margin_x),
            cy: rng.random_range(margin_y..h - margin_y),
            rx,
            ry,
            drift,
            real: Identity::draw(&mut rng),
            swapped: Identity::draw(&mut rng),
        }
    }

    fn centre(&self, frame_idx: usize) -> (f64, f64) {
        let phase = (frame_idx as f64 * 0.7).sin();
        (
            (self.cx + self.drift.0 * phase).round(),
            (self.cy + self.drift.1 * phase).round(),
        )
    }

    fn face_box(&self, frame_idx: usize, w: usize, h: usize) -> BBox {
        let (cx, cy) = self.centre(frame_idx);
        let (mx, my) = ((self.rx * 1.15).round(), (self.ry * 1.15).round());
        BBox::new(
            (cx - mx) as i64,
            (cy - my) as i64,
            2 * mx as i64,
            2 * my as i64,
        )
        .clip(w, h)
        .expect("face lies inside the frame")
    }

    /// Eye/mouth band replaced in tampered frames.
    fn tamper_region(&self, frame_idx: usize) -> BBox {
        let (cx, cy) = self.centre(frame_idx);
        let x0 = (cx - 0.7 * self.rx).floor();
        let x1 = (cx + 0.7 * self.rx).ceil();
        let y0 = (cy - 0.5 * self.ry).floor();
        let y1 = (cy + 0.7 * self.ry).ceil();
        BBox::new(x0 as i64, y0 as i64, (x1 - x0) as i64, (y1 - y0) as i64)
    }

    fn face_pixel(&self, id: &Identity, dx: f64, dy: f64, c: usize) -> Option<f64> {
        let (u, v) = (dx / self.rx, dy / self.ry);
        if u * u + v * v > 1.0 {
            return None;
        }
        let tex = 10.0 * texture(self.key ^ 0xface, dx as i64, dy as i64);
        for side in [-1.0, 1.0] {
            let (ex, ey) = (u - side * id.eye_spread, (v + 0.25) * 1.25);
            if ex * ex + ey * ey < id.eye_radius * id.eye_radius {
                return Some(id.eye[c]);
            }
        }
        if (v - 0.45).abs() < 0.07 && u.abs() < id.mouth_width / 2.0 {
            return Some(id.mouth[c]);
        }
        Some(id.skin[c] + tex)
    }

    fn render(&self, frame_idx: usize, w: usize, h: usize, tampered: bool) -> ImageBuf {
        let (cx, cy) = self.centre(frame_idx);
        let region = self.tamper_region(frame_idx);
        ImageBuf::from_fn(w, h, 3, |x, y, c| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let in_region = tampered
                && (region.x..region.x + region.w).contains(&(x as i64))
                && (region.y..region.y + region.h).contains(&(y as i64));
            let id = if in_region { &self.swapped } else { &self.real };
            let v = self.face_pixel(id, dx, dy, c).unwrap_or_else(|| {
                self.bg[c]
                    + 40.0 * y as f64 / h as f64
                    + 12.0 * texture(self.key, x as i64, y as i64)
            });
            v.round().clamp(0.0, 255.0)
        })
    }
}

fn real_id(i: usize) -> String {
    format!("real_{i:03}")
}

fn fake_id(i: usize) -> String {
    format!("fake_{i:03}")
}

/// Writes `frames/<video>/<frame>.png`, sources, boxes, labels and truth
/// files under `out_dir`. Output depends only on `(cfg, seed)`.
pub fn generate_corpus(
    cfg: &SynthConfig,
    out_dir: impl AsRef<Path>,
    seed: &SeedSpec,
) -> Result<SynthCorpus> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let pairs = cfg.n_videos / 2;
    let (w, h) = (cfg.width, cfg.height);
    let scenes: Vec<Scene> = (0..pairs)
        .map(|i| Scene::draw(&seed.child(real_id(i)), w, h))
        .collect();
    let jobs: Vec<(usize, usize, bool)> = (0..pairs)
        .flat_map(|i| (0..cfg.frames_per_video).flat_map(move |f| [(i, f, false), (i, f, true)]))
        .collect();
    jobs.par_iter().try_for_each(|&(i, f, fake)| {
        let id = if fake { fake_id(i) } else { real_id(i) };
        let frame = scenes[i].render(f, w, h, fake && is_tampered_frame(f));
        save_image(&frame, out_dir.join(format!("frames/{id}/{f:05}.png")))
    })?;

    let mut corpus = SynthCorpus {
        sources: Vec::new(),
        boxes: Vec::new(),
        labels: Vec::new(),
        truth: Vec::new(),
    };
    for (i, scene) in scenes.iter().enumerate() {
        for fake in [false, true] {
            let id = if fake { fake_id(i) } else { real_id(i) };
            corpus.sources.push(SourceVideoMeta {
                video_id: id.clone(),
                label: if fake { Label::Fake } else { Label::Real },
                original_id: fake.then(|| real_id(i)),
                frame_dir: format!("frames/{id}").into(),
                corpus: cfg.corpus,
            });
            corpus.labels.push(VideoLabel {
                video_id: id.clone(),
                label: if fake { Label::Fake } else { Label::Real },
            });
            for f in 0..cfg.frames_per_video {
                let b = scene.face_box(f, w, h);
                corpus.boxes.push(BoxRecord {
                    video_id: id.clone(),
                    frame_idx: f,
                    face_idx: 0,
                    x: b.x,
                    y: b.y,
                    w: b.w,
                    h: b.h,
                });
                if fake {
                    let tampered = is_tampered_frame(f);
                    corpus.truth.push(TruthRecord {
                        video_id: id.clone(),
                        frame_idx: f,
                        tampered,
                        region: tampered.then(|| scene.tamper_region(f)),
                    });
                }
            }
        }
    }
    write_jsonl(out_dir.join(SOURCES_FILE), &corpus.sources)?;
    write_jsonl(out_dir.join(BOXES_FILE), &corpus.boxes)?;
    write_jsonl(out_dir.join(LABELS_FILE), &corpus.labels)?;
    write_jsonl(out_dir.join(TRUTH_FILE), &corpus.truth)?;
    Ok(corpus)
}
