//! Text and shape overlays over frame sequences.
//!
//! Three placement modes: `static` (one location for the whole sequence),
//! `rolling` (the object slides along one axis across the sequence) and
//! `spontaneous` (random frames at random locations). Text is rendered from
//! the public-domain 8x8 bitmap font, scaled by an integer factor.

use font8x8::legacy::BASIC_LEGACY;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::seed::SeedSpec;

pub const TEXT_LEN: usize = 8;
const ALPHANUMERIC: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
const GLYPH: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DistractObject {
    Text { text: String },
    Circle { radius: usize },
    Rectangle { width: usize, height: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Text,
    Circle,
    Rectangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractMode {
    Static,
    Rolling,
    Spontaneous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Blue,
    Green,
    White,
    Black,
}

impl Color {
    pub const ALL: [Color; 5] = [
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::White,
        Color::Black,
    ];

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [255.0, 0.0, 0.0],
            Color::Blue => [0.0, 0.0, 255.0],
            Color::Green => [0.0, 255.0, 0.0],
            Color::White => [255.0, 255.0, 255.0],
            Color::Black => [0.0, 0.0, 0.0],
        }
    }

    /// Rec.601 luma, for single-channel frames.
    pub fn gray(self) -> f64 {
        let [r, g, b] = self.rgb();
        (0.299 * r + 0.587 * g + 0.114 * b).round()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    RightToLeft,
    LeftToRight,
    UpToDown,
    DownToUp,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::RightToLeft,
        Direction::LeftToRight,
        Direction::UpToDown,
        Direction::DownToUp,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistractionSpec {
    pub object: DistractObject,
    pub mode: DistractMode,
    /// 1..=6, text only.
    pub font_scale: usize,
    /// 1..=3; strokes are dilated by `thickness - 1` pixels.
    pub thickness: usize,
    pub color: Color,
    pub direction: Direction,
    /// Per-frame appearance probability for spontaneous mode.
    pub appearance_probability: f64,
}

impl DistractionSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(1..=6).contains(&self.font_scale) {
            return bad(format!("font scale must be 1..=6, got {}", self.font_scale));
        }
        if !(1..=3).contains(&self.thickness) {
            return bad(format!("thickness must be 1..=3, got {}", self.thickness));
        }
        if !(0.0..=1.0).contains(&self.appearance_probability) {
            return bad(format!(
                "appearance probability must lie in [0, 1], got {}",
                self.appearance_probability
            ));
        }
        match &self.object {
            DistractObject::Text { text } => {
                if text.len() != TEXT_LEN || !text.bytes().all(|b| b.is_ascii_alphanumeric()) {
                    return bad(format!(
                        "text must be {TEXT_LEN} alphanumeric chars, got {text:?}"
                    ));
                }
            }
            DistractObject::Circle { radius } if *radius == 0 => {
                return bad("circle radius must be > 0".into())
            }
            DistractObject::Rectangle { width, height } if *width == 0 || *height == 0 => {
                return bad("rectangle extents must be > 0".into())
            }
            _ => {}
        }
        Ok(())
    }
}

/// Boolean raster of an object.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    bits: Vec<bool>,
}

impl Mask {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    fn set(&mut self, x: usize, y: usize) {
        self.bits[y * self.width + x] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Square dilation by `r` pixels; the raster grows by `r` on each side.
    fn dilate(&self, r: usize) -> Mask {
        if r == 0 {
            return self.clone();
        }
        let mut out = Mask::new(self.width + 2 * r, self.height + 2 * r);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    for oy in y..=y + 2 * r {
                        for ox in x..=x + 2 * r {
                            out.set(ox, oy);
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn gen_random_text(seed: &SeedSpec) -> String {
    let mut rng = seed.rng();
    (0..TEXT_LEN)
        .map(|_| ALPHANUMERIC[rng.random_range(0..ALPHANUMERIC.len())] as char)
        .collect()
}

/// Rasterizes the object at the spec's scale and thickness.
pub fn render(spec: &DistractionSpec) -> Result<Mask> {
    spec.validate()?;
    let t = spec.thickness;
    let mask = match &spec.object {
        DistractObject::Text { text } => {
            let s = spec.font_scale;
            let mut m = Mask::new(text.len() * GLYPH * s, GLYPH * s);
            for (i, ch) in text.bytes().enumerate() {
                let glyph = BASIC_LEGACY[ch as usize];
                for (row, bits) in glyph.iter().enumerate() {
                    for col in 0..GLYPH {
                        if bits & (1 << col) != 0 {
                            for dy in 0..s {
                                for dx in 0..s {
                                    m.set((i * GLYPH + col) * s + dx, row * s + dy);
                                }
                            }
                        }
                    }
                }
            }
            m.dilate(t - 1)
        }
        DistractObject::Circle { radius } => {
            let r = *radius as f64;
            let side = 2 * radius + 1;
            let mut m = Mask::new(side, side);
            for y in 0..side {
                for x in 0..side {
                    let d = ((x as f64 - r).powi(2) + (y as f64 - r).powi(2)).sqrt();
                    if d <= r + 0.5 && d > r + 0.5 - t as f64 {
                        m.set(x, y);
                    }
                }
            }
            m
        }
        DistractObject::Rectangle { width, height } => {
            let mut m = Mask::new(*width, *height);
            for y in 0..*height {
                for x in 0..*width {
                    if x < t || y < t || x + t >= *width || y + t >= *height {
                        m.set(x, y);
                    }
                }
            }
            m
        }
    };
    Ok(mask)
}

/// Paints `mask` with its top-left corner at `(x0, y0)`, clipped to the frame.
pub fn paint(frame: &mut ImageBuf, mask: &Mask, x0: i64, y0: i64, color: Color) {
    let (w, h, c) = frame.dims();
    let values: Vec<f64> = if c == 1 {
        vec![color.gray()]
    } else {
        color.rgb().to_vec()
    };
    for my in 0..mask.height {
        let y = y0 + my as i64;
        if y < 0 || y >= h as i64 {
            continue;
        }
        for mx in 0..mask.width {
            let x = x0 + mx as i64;
            if x < 0 || x >= w as i64 || !mask.get(mx, my) {
                continue;
            }
            for (ch, &v) in values.iter().enumerate() {
                frame.set(x as usize, y as usize, ch, v);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<ImageBuf>,
    indices: Vec<usize>,
}

impl FrameSequence {
    pub fn new(frames: Vec<ImageBuf>, indices: Vec<usize>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidParameter("frame sequence is empty".into()));
        }
        if frames.len() != indices.len() {
            return Err(Error::InvalidParameter(format!(
                "{} frames but {} indices",
                frames.len(),
                indices.len()
            )));
        }
        if let Some(f) = frames.iter().find(|f| !f.same_shape(&frames[0])) {
            return Err(Error::DimensionMismatch {
                left: frames[0].shape_string(),
                right: f.shape_string(),
            });
        }
        Ok(Self { frames, indices })
    }

    /// Frames numbered `0..n`.
    pub fn from_frames(frames: Vec<ImageBuf>) -> Result<Self> {
        let n = frames.len();
        Self::new(frames, (0..n).collect())
    }

    pub fn frames(&self) -> &[ImageBuf] {
        &self.frames
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn into_frames(self) -> Vec<ImageBuf> {
        self.frames
    }

    fn frame_dims(&self) -> (usize, usize) {
        (self.frames[0].width(), self.frames[0].height())
    }
}

fn require_mode(spec: &DistractionSpec, mode: DistractMode) -> Result<()> {
    if spec.mode == mode {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "spec mode {:?} used with {:?} overlay",
            spec.mode, mode
        )))
    }
}

fn random_fit(rng: &mut impl Rng, mask: &Mask, (w, h): (usize, usize)) -> Result<(i64, i64)> {
    if mask.width > w || mask.height > h {
        return Err(Error::InvalidParameter(format!(
            "object {}x{} larger than frame {w}x{h}",
            mask.width, mask.height
        )));
    }
    Ok((
        rng.random_range(0..=w - mask.width) as i64,
        rng.random_range(0..=h - mask.height) as i64,
    ))
}

/// One location for the whole sequence.
pub fn overlay_static(
    seq: &FrameSequence,
    spec: &DistractionSpec,
    seed: &SeedSpec,
) -> Result<FrameSequence> {
    require_mode(spec, DistractMode::Static)?;
    let mask = render(spec)?;
    let (x, y) = random_fit(&mut seed.child("static").rng(), &mask, seq.frame_dims())?;
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let mut f = f.clone();
            paint(&mut f, &mask, x, y, spec.color);
            f
        })
        .collect();
    FrameSequence::new(frames, seq.indices.clone())
}

/// Top-left positions of a rolling object; a single frame gets `start`. The object moves from `start`
/// until its trailing edge reaches the opposite border, at least one pixel
/// per frame.
pub fn rolling_trajectory(
    start: (i64, i64),
    direction: Direction,
    frame: (usize, usize),
    object: (usize, usize),
    n: usize,
) -> Vec<(i64, i64)> {
    let (x0, y0) = start;
    let (w, h) = (frame.0 as i64, frame.1 as i64);
    let (ow, oh) = (object.0 as i64, object.1 as i64);
    let travel = match direction {
        Direction::LeftToRight => w - x0,
        Direction::RightToLeft => x0 + ow,
        Direction::UpToDown => h - y0,
        Direction::DownToUp => y0 + oh,
    };
    let step = if n > 1 {
        (travel as f64 / (n - 1) as f64).max(1.0)
    } else {
        1.0
    };
    (0..n)
        .map(|i| {
            let d = (i as f64 * step).floor() as i64;
            match direction {
                Direction::LeftToRight => (x0 + d, y0),
                Direction::RightToLeft => (x0 - d, y0),
                Direction::UpToDown => (x0, y0 + d),
                Direction::DownToUp => (x0, y0 - d),
            }
        })
        .collect()
}

pub fn overlay_rolling(
    seq: &FrameSequence,
    spec: &DistractionSpec,
    seed: &SeedSpec,
) -> Result<FrameSequence> {
    require_mode(spec, DistractMode::Rolling)?;
    let mask = render(spec)?;
    let dims = seq.frame_dims();
    let mut rng = seed.child("rolling").rng();
    // start anywhere the object is at least partly visible
    let start = (
        rng.random_range(0..dims.0) as i64 - rng.random_range(0..mask.width.min(dims.0)) as i64,
        rng.random_range(0..dims.1) as i64 - rng.random_range(0..mask.height.min(dims.1)) as i64,
    );
    let path = rolling_trajectory(
        start,
        spec.direction,
        dims,
        (mask.width, mask.height),
        seq.len(),
    );
    let frames = seq
        .frames
        .iter()
        .zip(path)
        .map(|(f, (x, y))| {
            let mut f = f.clone();
            paint(&mut f, &mask, x, y, spec.color);
            f
        })
        .collect();
    FrameSequence::new(frames, seq.indices.clone())
}

/// Returns the overlaid sequence and which frames were touched.
pub fn overlay_spontaneous_detailed(
    seq: &FrameSequence,
    spec: &DistractionSpec,
    seed: &SeedSpec,
) -> Result<(FrameSequence, Vec<bool>)> {
    require_mode(spec, DistractMode::Spontaneous)?;
    let mask = render(spec)?;
    let dims = seq.frame_dims();
    let mut hits = Vec::with_capacity(seq.len());
    let mut frames = Vec::with_capacity(seq.len());
    for (f, &idx) in seq.frames.iter().zip(&seq.indices) {
        let mut rng = seed.child(format!("frame{idx}")).rng();
        let mut f = f.clone();
        let hit = rng.random::<f64>() < spec.appearance_probability;
        if hit {
            let (x, y) = random_fit(&mut rng, &mask, dims)?;
            paint(&mut f, &mask, x, y, spec.color);
        }
        hits.push(hit);
        frames.push(f);
    }
    Ok((FrameSequence::new(frames, seq.indices.clone())?, hits))
}

pub fn overlay_spontaneous(
    seq: &FrameSequence,
    spec: &DistractionSpec,
    seed: &SeedSpec,
) -> Result<FrameSequence> {
    overlay_spontaneous_detailed(seq, spec, seed).map(|(s, _)| s)
}

/// Dispatches on the spec's mode.
pub fn overlay(
    seq: &FrameSequence,
    spec: &DistractionSpec,
    seed: &SeedSpec,
) -> Result<FrameSequence> {
    match spec.mode {
        DistractMode::Static => overlay_static(seq, spec, seed),
        DistractMode::Rolling => overlay_rolling(seq, spec, seed),
        DistractMode::Spontaneous => overlay_spontaneous(seq, spec, seed),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistractPolicy {
    pub modes: Vec<DistractMode>,
    pub objects: Vec<ObjectKind>,
    pub appearance_probability: f64,
    /// Shape extents as fractions of the frame's smaller side.
    pub shape_extent: [f64; 2],
}

impl Default for DistractPolicy {
    fn default() -> Self {
        Self {
            modes: vec![
                DistractMode::Static,
                DistractMode::Rolling,
                DistractMode::Spontaneous,
            ],
            objects: vec![ObjectKind::Text, ObjectKind::Circle, ObjectKind::Rectangle],
            appearance_probability: 0.2,
            shape_extent: [0.05, 0.25],
        }
    }
}

/// Draws a spec for frames of size `frame`. Font scale is capped so that
/// the text fits the frame.
pub fn random_spec(
    seed: &SeedSpec,
    policy: &DistractPolicy,
    frame: (usize, usize),
) -> Result<DistractionSpec> {
    if policy.modes.is_empty() || policy.objects.is_empty() {
        return Err(Error::InvalidParameter(
            "distraction policy offers no modes or objects".into(),
        ));
    }
    let [lo, hi] = policy.shape_extent;
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "shape extent [{lo}, {hi}] invalid"
        )));
    }
    let mut rng = seed.child("spec").rng();
    let mode = policy.modes[rng.random_range(0..policy.modes.len())];
    let kind = policy.objects[rng.random_range(0..policy.objects.len())];
    let thickness = rng.random_range(1..=3);
    let color = Color::ALL[rng.random_range(0..Color::ALL.len())];
    let direction = Direction::ALL[rng.random_range(0..Direction::ALL.len())];
    let min_side = frame.0.min(frame.1) as f64;
    let extent = |rng: &mut rand_chacha::ChaCha8Rng| {
        ((rng.random_range(lo..=hi) * min_side).round() as usize).max(1)
    };
    let mut font_scale = rng.random_range(1..=6);
    let object = match kind {
        ObjectKind::Text => {
            let pad = 2 * (thickness - 1);
            let fit_w = frame.0.saturating_sub(pad) / (TEXT_LEN * GLYPH);
            let fit_h = frame.1.saturating_sub(pad) / GLYPH;
            let cap = fit_w.min(fit_h).min(6);
            if cap == 0 {
                return Err(Error::InvalidParameter(format!(
                    "frame {}x{} too small for {TEXT_LEN}-char text",
                    frame.0, frame.1
                )));
            }
            font_scale = font_scale.min(cap);
            DistractObject::Text {
                text: gen_random_text(&seed.child("text")),
            }
        }
        ObjectKind::Circle => DistractObject::Circle {
            radius: (extent(&mut rng) / 2).max(1),
        },
        ObjectKind::Rectangle => DistractObject::Rectangle {
            width: extent(&mut rng),
            height: extent(&mut rng),
        },
    };
    let spec = DistractionSpec {
        object,
        mode,
        font_scale,
        thickness,
        color,
        direction,
        appearance_probability: policy.appearance_probability,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn text_spec(mode: DistractMode, color: Color) -> DistractionSpec {
        DistractionSpec {
            object: DistractObject::Text {
                text: "Ab3xY9Qz".into(),
            },
            mode,
            font_scale: 1,
            thickness: 1,
            color,
            direction: Direction::LeftToRight,
            appearance_probability: 0.2,
        }
    }

    fn frames(n: usize, w: usize, h: usize, c: usize, v: f64) -> FrameSequence {
        FrameSequence::from_frames(vec![ImageBuf::filled(w, h, c, v); n]).unwrap()
    }

    /// Bounding box of pixels that differ between two frames.
    fn diff_bbox(a: &ImageBuf, b: &ImageBuf) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..a.height() {
            for x in 0..a.width() {
                if (0..a.channels()).any(|c| a.get(x, y, c) != b.get(x, y, c)) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bb
    }

    #[test]
    fn text_is_eight_alphanumerics_and_deterministic() {
        let s = SeedSpec::new(3, "video1");
        let t = gen_random_text(&s);
        assert_eq!(t.len(), 8);
        assert!(t.chars().all(|c| c.is_ascii_alphanumeric()));
        assert_eq!(t, gen_random_text(&s));
    }

    #[test]
    fn text_strings_rarely_collide() {
        let distinct: HashSet<String> = (0..10_000)
            .map(|i| gen_random_text(&SeedSpec::new(11, format!("v{i}"))))
            .collect();
        assert!(distinct.len() >= 9_990, "{}", distinct.len());
    }

    #[test]
    fn render_sizes() {
        let mut spec = text_spec(DistractMode::Static, Color::White);
        let m = render(&spec).unwrap();
        assert_eq!((m.width, m.height), (64, 8));
        spec.font_scale = 3;
        spec.thickness = 2;
        let m = render(&spec).unwrap();
        assert_eq!((m.width, m.height), (64 * 3 + 2, 24 + 2));
        spec.object = DistractObject::Rectangle {
            width: 10,
            height: 6,
        };
        spec.thickness = 1;
        let m = render(&spec).unwrap();
        assert_eq!(m.count(), 2 * 10 + 2 * 4);
        spec.object = DistractObject::Circle { radius: 5 };
        let m = render(&spec).unwrap();
        assert_eq!((m.width, m.height), (11, 11));
        assert!(m.get(5, 0) && m.get(0, 5) && !m.get(5, 5));
    }

    #[test]
    fn thicker_strokes_cover_more() {
        let mut spec = text_spec(DistractMode::Static, Color::White);
        let thin = render(&spec).unwrap().count();
        spec.thickness = 3;
        assert!(render(&spec).unwrap().count() > thin);
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = text_spec(DistractMode::Static, Color::White);
        spec.font_scale = 7;
        assert!(spec.validate().is_err());
        spec.font_scale = 1;
        spec.object = DistractObject::Text {
            text: "short".into(),
        };
        assert!(spec.validate().is_err());
        spec.object = DistractObject::Text {
            text: "abc-efgh".into(),
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn static_overlay_same_mask_every_frame() {
        let seq = frames(5, 100, 40, 3, 0.0);
        let out = overlay_static(
            &seq,
            &text_spec(DistractMode::Static, Color::White),
            &SeedSpec::new(1, "v"),
        )
        .unwrap();
        let masks: Vec<_> = out
            .frames()
            .iter()
            .map(|f| diff_bbox(&seq.frames()[0], f))
            .collect();
        assert!(masks[0].is_some());
        assert!(masks.iter().all(|m| *m == masks[0]));
        assert_eq!(out.frames()[0], out.frames()[4]);
        // white text on black: touched pixels are 255 in every channel
        for f in out.frames() {
            for px in f.pixels().chunks(3) {
                assert!(px == [0.0, 0.0, 0.0] || px == [255.0, 255.0, 255.0]);
            }
        }
    }

    #[test]
    fn static_single_frame_and_too_large() {
        let seq = frames(1, 70, 10, 1, 0.0);
        let out = overlay_static(
            &seq,
            &text_spec(DistractMode::Static, Color::White),
            &SeedSpec::new(1, "v"),
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert!(diff_bbox(&seq.frames()[0], &out.frames()[0]).is_some());
        let tiny = frames(1, 40, 10, 1, 0.0);
        assert!(overlay_static(
            &tiny,
            &text_spec(DistractMode::Static, Color::White),
            &SeedSpec::new(1, "v")
        )
        .is_err());
    }

    #[test]
    fn mode_mismatch_rejected() {
        let seq = frames(3, 100, 40, 3, 0.0);
        assert!(overlay_rolling(
            &seq,
            &text_spec(DistractMode::Static, Color::Red),
            &SeedSpec::new(1, "v")
        )
        .is_err());
    }

    #[test]
    fn rolling_left_to_right_moves_right() {
        let path = rolling_trajectory((10, 7), Direction::LeftToRight, (128, 64), (20, 8), 30);
        assert_eq!(path[0], (10, 7));
        assert!(path.windows(2).all(|p| p[1].0 > p[0].0 && p[1].1 == p[0].1));
        // many frames, short travel: still strictly increasing
        let path = rolling_trajectory((120, 0), Direction::LeftToRight, (128, 64), (20, 8), 50);
        assert!(path.windows(2).all(|p| p[1].0 > p[0].0));
    }

    #[test]
    fn rolling_two_frames() {
        let path = rolling_trajectory((30, 5), Direction::UpToDown, (100, 50), (10, 10), 2);
        assert_eq!(path, vec![(30, 5), (30, 50)]);
    }

    #[test]
    fn rolling_mirror_symmetry() {
        let (w, ow) = (128usize, 24usize);
        for x0 in [0i64, 13, 60, 104] {
            let ltr = rolling_trajectory((x0, 3), Direction::LeftToRight, (w, 64), (ow, 8), 17);
            let mirrored_start = w as i64 - ow as i64 - x0;
            let rtl = rolling_trajectory(
                (mirrored_start, 3),
                Direction::RightToLeft,
                (w, 64),
                (ow, 8),
                17,
            );
            for (a, b) in ltr.iter().zip(&rtl) {
                assert_eq!(b.0, w as i64 - ow as i64 - a.0);
            }
            // played backwards, right-to-left motion runs left to right
            let rev: Vec<_> = rtl.iter().rev().collect();
            assert!(rev.windows(2).all(|p| p[1].0 > p[0].0));
        }
    }

    #[test]
    fn rolling_overlay_clips_and_moves() {
        let seq = frames(12, 96, 48, 3, 0.0);
        let mut spec = text_spec(DistractMode::Rolling, Color::Green);
        spec.object = DistractObject::Rectangle {
            width: 20,
            height: 10,
        };
        spec.direction = Direction::RightToLeft;
        let out = overlay_rolling(&seq, &spec, &SeedSpec::new(2, "v")).unwrap();
        let lefts: Vec<_> = out
            .frames()
            .iter()
            .filter_map(|f| diff_bbox(&seq.frames()[0], f).map(|b| b.0))
            .collect();
        assert!(!lefts.is_empty());
        assert!(lefts.windows(2).all(|p| p[1] <= p[0]));
        // a single frame shows the object at its start position
        let one = frames(1, 96, 48, 3, 0.0);
        let out = overlay_rolling(&one, &spec, &SeedSpec::new(2, "v")).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn spontaneous_probability_extremes() {
        let seq = frames(20, 90, 30, 3, 50.0);
        let mut spec = text_spec(DistractMode::Spontaneous, Color::Red);
        spec.appearance_probability = 0.0;
        assert_eq!(
            overlay_spontaneous(&seq, &spec, &SeedSpec::new(4, "v")).unwrap(),
            seq
        );
        spec.appearance_probability = 1.0;
        let out = overlay_spontaneous(&seq, &spec, &SeedSpec::new(4, "v")).unwrap();
        assert!(out.frames().iter().all(|f| f != &seq.frames()[0]));
    }

    #[test]
    fn spontaneous_binomial_count() {
        let seq = frames(1000, 80, 12, 1, 128.0);
        let mut spec = text_spec(DistractMode::Spontaneous, Color::White);
        spec.appearance_probability = 0.3;
        let (_, hits) = overlay_spontaneous_detailed(&seq, &spec, &SeedSpec::new(8, "v")).unwrap();
        let k = hits.iter().filter(|&&h| h).count() as f64;
        let sigma = (1000.0f64 * 0.3 * 0.7).sqrt();
        assert!((k - 300.0).abs() <= 3.0 * sigma, "{k}");
    }

    #[test]
    fn overlay_touches_only_mask_pixels() {
        let base = ImageBuf::from_fn(120, 60, 3, |x, y, c| {
            ((x * 3 + y * 5 + c * 7) % 200) as f64 + 20.0
        });
        let seq = FrameSequence::from_frames(vec![base.clone(); 6]).unwrap();
        let policy = DistractPolicy::default();
        for i in 0..40 {
            let seed = SeedSpec::new(21, format!("v{i}"));
            let spec = random_spec(&seed, &policy, (120, 60)).unwrap();
            let out = overlay(&seq, &spec, &seed).unwrap();
            let color = spec.color.rgb();
            for f in out.frames() {
                assert_eq!(f.dims(), base.dims());
                for (a, b) in base.pixels().chunks(3).zip(f.pixels().chunks(3)) {
                    assert!(a == b || b == color, "{a:?} -> {b:?}");
                }
            }
            assert_eq!(out, overlay(&seq, &spec, &seed).unwrap());
        }
    }

    #[test]
    fn random_spec_in_domain() {
        let policy = DistractPolicy::default();
        for i in 0..200 {
            let spec =
                random_spec(&SeedSpec::new(5, format!("k{i}")), &policy, (256, 256)).unwrap();
            assert!((1..=6).contains(&spec.font_scale));
            assert!((1..=3).contains(&spec.thickness));
            if let DistractObject::Rectangle { width, height } = spec.object {
                assert!((13..=64).contains(&width) && (13..=64).contains(&height));
            }
        }
        assert!(random_spec(
            &SeedSpec::new(5, "x"),
            &DistractPolicy {
                objects: vec![ObjectKind::Text],
                ..policy
            },
            (40, 40)
        )
        .is_err());
    }

    #[test]
    fn gray_frames_use_luma() {
        assert_eq!(Color::White.gray(), 255.0);
        assert_eq!(Color::Red.gray(), 76.0);
    }
}
