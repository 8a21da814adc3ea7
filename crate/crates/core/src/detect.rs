//! Face-to-video aggregation, parameter grid search and classification
//! metrics.
//!
//! A video is declared fake when more than `fake_fraction` of its faces have
//! `p_fake` above `fake_frame_threshold` (both comparisons strict). The
//! video-level score used for ROC analysis is the fraction of faces above the
//! threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::write_file;
use crate::label::Label;

/// Definition of the video-level score, stamped into every report.
pub const VIDEO_SCORE_NOTE: &str =
    "video_score = fraction of faces with p_fake > FAKE_FRAME_THRESHOLD (used for ROC AUC)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceScore {
    pub video_id: String,
    pub frame_idx: usize,
    pub face_idx: usize,
    pub p_fake: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoLabel {
    pub video_id: String,
    pub label: Label,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationParams {
    pub fake_frame_threshold: f64,
    pub fake_fraction: f64,
}

impl AggregationParams {
    /// Grid-searched operating point for classifying plain face crops.
    pub const PLAIN_FRAMES: AggregationParams = AggregationParams {
        fake_frame_threshold: 0.80,
        fake_fraction: 0.30,
    };

    /// Grid-searched operating point for classifying predicted MRIs.
    pub const MRI_BASED: AggregationParams = AggregationParams {
        fake_frame_threshold: 0.70,
        fake_fraction: 0.30,
    };

    pub fn new(fake_frame_threshold: f64, fake_fraction: f64) -> Result<Self> {
        let p = Self {
            fake_frame_threshold,
            fake_fraction,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "plain-frames" => Some(Self::PLAIN_FRAMES),
            "mri-based" => Some(Self::MRI_BASED),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fake_frame_threshold", self.fake_frame_threshold),
            ("fake_fraction", self.fake_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoVerdict {
    pub verdict: Label,
    pub score: f64,
    pub fake_faces: usize,
    pub total_faces: usize,
}

pub fn aggregate_video(scores: &[FaceScore], params: &AggregationParams) -> Result<VideoVerdict> {
    params.validate()?;
    if scores.is_empty() {
        return Err(Error::Undetermined("video has no detected faces".into()));
    }
    let fake_faces = scores
        .iter()
        .filter(|s| s.p_fake > params.fake_frame_threshold)
        .count();
    let score = fake_faces as f64 / scores.len() as f64;
    Ok(VideoVerdict {
        verdict: if score > params.fake_fraction {
            Label::Fake
        } else {
            Label::Real
        },
        score,
        fake_faces,
        total_faces: scores.len(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(verdicts: &[Label], labels: &[Label]) -> Result<ConfusionMatrix> {
    if verdicts.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            left: format!("{} verdicts", verdicts.len()),
            right: format!("{} labels", labels.len()),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (v, l) in verdicts.iter().zip(labels) {
        match (v, l) {
            (Label::Fake, Label::Fake) => cm.tp += 1,
            (Label::Fake, Label::Real) => cm.fp += 1,
            (Label::Real, Label::Real) => cm.tn += 1,
            (Label::Real, Label::Fake) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Rates with a zero denominator are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tpr: Option<f64>,
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
    pub tnr: Option<f64>,
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub specificity: Option<f64>,
    pub auc_roc: Option<f64>,
}

impl MetricsReport {
    pub fn rows(&self) -> [(&'static str, Option<f64>); 10] {
        [
            ("tpr", self.tpr),
            ("fnr", self.fnr),
            ("fpr", self.fpr),
            ("tnr", self.tnr),
            ("accuracy", self.accuracy),
            ("balanced_accuracy", self.balanced_accuracy),
            ("f1", self.f1),
            ("precision", self.precision),
            ("specificity", self.specificity),
            ("auc_roc", self.auc_roc),
        ]
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Rate metrics from `cm`; AUC from the per-video scores (absent when only
/// one class is present).
pub fn metrics(cm: &ConfusionMatrix, scores: &[f64], labels: &[Label]) -> Result<MetricsReport> {
    if scores.len() != labels.len() || cm.total() != labels.len() {
        return Err(Error::DimensionMismatch {
            left: format!("confusion total {}", cm.total()),
            right: format!("{} scores / {} labels", scores.len(), labels.len()),
        });
    }
    let positives = labels.iter().filter(|l| l.is_fake()).count();
    if positives != cm.tp + cm.fn_ {
        return Err(Error::Data(format!(
            "confusion matrix has {} positives, labels have {positives}",
            cm.tp + cm.fn_
        )));
    }
    let tpr = ratio(cm.tp, cm.tp + cm.fn_);
    let tnr = ratio(cm.tn, cm.tn + cm.fp);
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let f1 = match (precision, tpr) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    let auc_roc = if positives > 0 && positives < labels.len() {
        Some(roc_auc(scores, labels)?)
    } else {
        None
    };
    Ok(MetricsReport {
        tpr,
        fnr: ratio(cm.fn_, cm.tp + cm.fn_),
        fpr: ratio(cm.fp, cm.tn + cm.fp),
        tnr,
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        balanced_accuracy: tpr.zip(tnr).map(|(a, b)| (a + b) / 2.0),
        f1,
        precision,
        specificity: tnr,
        auc_roc,
    })
}

/// Area under the ROC curve as the Mann-Whitney statistic with mid-ranks:
/// `P(pos > neg) + P(tie) / 2`.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            left: format!("{} scores", scores.len()),
            right: format!("{} labels", labels.len()),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("NaN score".into()));
    }
    let pos = labels.iter().filter(|l| l.is_fake()).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidParameter("ROC AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += mid
            * order[i..=j]
                .iter()
                .filter(|&&k| labels[k].is_fake())
                .count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Scores grouped by video, faces ordered by `(frame_idx, face_idx)`.
pub fn group_by_video(scores: &[FaceScore]) -> Result<BTreeMap<String, Vec<FaceScore>>> {
    let mut seen = BTreeSet::new();
    let mut out: BTreeMap<String, Vec<FaceScore>> = BTreeMap::new();
    for s in scores {
        if !(0.0..=1.0).contains(&s.p_fake) {
            return Err(Error::InvalidParameter(format!(
                "{}/{}/{}: p_fake {} outside [0, 1]",
                s.video_id, s.frame_idx, s.face_idx, s.p_fake
            )));
        }
        if !seen.insert((s.video_id.as_str(), s.frame_idx, s.face_idx)) {
            return Err(Error::Data(format!(
                "duplicate face score {}/{}/{}",
                s.video_id, s.frame_idx, s.face_idx
            )));
        }
        out.entry(s.video_id.clone()).or_default().push(s.clone());
    }
    for faces in out.values_mut() {
        faces.sort_by_key(|s| (s.frame_idx, s.face_idx));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub video_id: String,
    pub label: Label,
    pub verdict: Label,
    pub video_score: f64,
    pub fake_faces: usize,
    pub total_faces: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub params: AggregationParams,
    pub videos: Vec<VideoResult>,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    /// Labelled videos without any face score.
    pub dropped: Vec<String>,
}

/// Aggregates every labelled video and scores the verdicts. Videos without
/// faces are dropped; scores for unlabelled videos are an error.
pub fn evaluate(
    grouped: &BTreeMap<String, Vec<FaceScore>>,
    labels: &BTreeMap<String, Label>,
    params: &AggregationParams,
) -> Result<Evaluation> {
    if let Some(v) = grouped.keys().find(|v| !labels.contains_key(*v)) {
        return Err(Error::Data(format!("scores for unlabelled video {v}")));
    }
    let mut videos = Vec::new();
    let mut dropped = Vec::new();
    for (video_id, &label) in labels {
        match grouped.get(video_id) {
            Some(faces) => {
                let v = aggregate_video(faces, params)?;
                videos.push(VideoResult {
                    video_id: video_id.clone(),
                    label,
                    verdict: v.verdict,
                    video_score: v.score,
                    fake_faces: v.fake_faces,
                    total_faces: v.total_faces,
                });
            }
            None => {
                log::warn!("video {video_id}: no face scores, dropped as undetermined");
                dropped.push(video_id.clone());
            }
        }
    }
    if videos.is_empty() {
        return Err(Error::Undetermined(
            "no labelled video has face scores".into(),
        ));
    }
    let verdicts: Vec<Label> = videos.iter().map(|v| v.verdict).collect();
    let truth: Vec<Label> = videos.iter().map(|v| v.label).collect();
    let scores: Vec<f64> = videos.iter().map(|v| v.video_score).collect();
    let cm = confusion(&verdicts, &truth)?;
    let metrics = metrics(&cm, &scores, &truth)?;
    Ok(Evaluation {
        params: *params,
        videos,
        confusion: cm,
        metrics,
        dropped,
    })
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub fake_frame_threshold: f64,
    pub fake_fraction: f64,
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub objective: String,
    pub best: AggregationParams,
    pub best_balanced_accuracy: f64,
    pub table: Vec<GridCell>,
}

/// Exhaustive search maximizing balanced accuracy. Ties go to the lowest
/// threshold, then the lowest fraction.
pub fn grid_search(
    grouped: &BTreeMap<String, Vec<FaceScore>>,
    labels: &BTreeMap<String, Label>,
    thresholds: &[f64],
    fractions: &[f64],
) -> Result<GridResult> {
    if thresholds.is_empty() || fractions.is_empty() {
        return Err(Error::InvalidParameter("empty search grid".into()));
    }
    let sorted = |g: &[f64]| -> Result<Vec<f64>> {
        let mut g = g.to_vec();
        if g.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "grid values must lie in [0, 1]".into(),
            ));
        }
        g.sort_by(f64::total_cmp);
        g.dedup();
        Ok(g)
    };
    let thresholds = sorted(thresholds)?;
    let fractions = sorted(fractions)?;
    let present: Vec<Label> = labels
        .iter()
        .filter(|(v, _)| grouped.contains_key(*v))
        .map(|(_, &l)| l)
        .collect();
    if !present.contains(&Label::Fake) || !present.contains(&Label::Real) {
        return Err(Error::InvalidParameter(
            "grid search needs scored videos of both classes".into(),
        ));
    }
    let cells: Vec<(f64, f64)> = thresholds
        .iter()
        .flat_map(|&t| fractions.iter().map(move |&f| (t, f)))
        .collect();
    use rayon::prelude::*;
    let table = cells
        .par_iter()
        .map(|&(t, f)| {
            let e = evaluate(grouped, labels, &AggregationParams::new(t, f)?)?;
            Ok(GridCell {
                fake_frame_threshold: t,
                fake_fraction: f,
                balanced_accuracy: e.metrics.balanced_accuracy.expect("both classes present"),
                accuracy: e.metrics.accuracy.expect("non-empty"),
                confusion: e.confusion,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, cell) in table.iter().enumerate() {
        if cell.balanced_accuracy > table[best].balanced_accuracy {
            best = i;
        }
    }
    Ok(GridResult {
        objective: "balanced_accuracy".into(),
        best: AggregationParams {
            fake_frame_threshold: table[best].fake_frame_threshold,
            fake_fraction: table[best].fake_fraction,
        },
        best_balanced_accuracy: table[best].balanced_accuracy,
        table,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

pub fn metrics_csv(e: &Evaluation) -> String {
    let mut s = format!("# {VIDEO_SCORE_NOTE}\nmetric,value\n");
    for (name, v) in e.metrics.rows() {
        let _ = writeln!(s, "{name},{}", fmt_opt(v));
    }
    s
}

pub fn verdicts_csv(e: &Evaluation) -> String {
    let mut s = String::from("video_id,label,verdict,video_score,fake_faces,total_faces\n");
    for v in &e.videos {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{},{}",
            v.video_id, v.label, v.verdict, v.video_score, v.fake_faces, v.total_faces
        );
    }
    s
}

pub fn summary_markdown(e: &Evaluation, grid: Option<&GridResult>) -> String {
    let cm = &e.confusion;
    let mut s = String::from("# Video-level DeepFake detection\n\n");
    let _ = writeln!(s, "> {VIDEO_SCORE_NOTE}\n");
    let _ = writeln!(
        s,
        "FAKE_FRAME_THRESHOLD = {:.2}, FAKE_FRACTION = {:.2}; {} videos evaluated, {} dropped (no faces).\n",
        e.params.fake_frame_threshold,
        e.params.fake_fraction,
        e.videos.len(),
        e.dropped.len()
    );
    if let Some(g) = grid {
        let _ = writeln!(
            s,
            "Parameters chosen by grid search over {} cells (objective: {}, best {:.6}).\n",
            g.table.len(),
            g.objective,
            g.best_balanced_accuracy
        );
    }
    s.push_str("## Confusion matrix\n\n");
    s.push_str("| | predicted fake | predicted real |\n|---|---|---|\n");
    let _ = writeln!(s, "| actual fake | {} | {} |", cm.tp, cm.fn_);
    let _ = writeln!(s, "| actual real | {} | {} |\n", cm.fp, cm.tn);
    s.push_str("## Metrics\n\n| metric | value |\n|---|---|\n");
    for (name, v) in e.metrics.rows() {
        let _ = writeln!(s, "| {name} | {} |", fmt_opt(v));
    }
    s
}

/// Writes `metrics.csv`, `verdicts.csv`, `summary.md` and, for grid runs,
/// `grid.json` into `dir`.
pub fn write_reports(
    dir: impl AsRef<Path>,
    e: &Evaluation,
    grid: Option<&GridResult>,
) -> Result<()> {
    let dir = dir.as_ref();
    write_file(dir.join("metrics.csv"), metrics_csv(e).as_bytes())?;
    write_file(dir.join("verdicts.csv"), verdicts_csv(e).as_bytes())?;
    write_file(dir.join("summary.md"), summary_markdown(e, grid).as_bytes())?;
    if let Some(g) = grid {
        let json = serde_json::to_string_pretty(g).expect("serializable grid");
        write_file(dir.join("grid.json"), json.as_bytes())?;
    }
    Ok(())
}
