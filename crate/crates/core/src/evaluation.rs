//! Frame-level detection metrics, score timelines and their exports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::layers::sigmoid;
use crate::model::{head_forward, trunk_features, CanWeights, Head};
use crate::preprocessing::{
    sequence_to_inputs, BBox, FrameSequence, Label, ModelInputPair, PreparedClip,
};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// About one second at 15 fps.
pub const DEFAULT_WINDOW: usize = 15;

/// Per-frame detection scores of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTimeline {
    pub video_id: String,
    pub frame_indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl ScoreTimeline {
    pub fn new(
        video_id: impl Into<String>,
        frame_indices: Vec<usize>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        if frame_indices.len() != scores.len() {
            return Err(Error::InvalidArgument(format!(
                "{} frame indices for {} scores",
                frame_indices.len(),
                scores.len()
            )));
        }
        if frame_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "timeline frame indices must be strictly increasing".into(),
            ));
        }
        Ok(ScoreTimeline {
            video_id: video_id.into(),
            frame_indices,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn check_classifier(weights: &CanWeights) -> Result<()> {
    if weights.config.head != Head::Classification {
        return Err(Error::InvalidArgument(
            "scoring needs a classification head".into(),
        ));
    }
    Ok(())
}

fn score_pair(weights: &CanWeights, pair: &ModelInputPair) -> Result<f64> {
    let features = trunk_features(&pair.motion, &pair.appearance, weights)?;
    Ok(sigmoid(head_forward(weights, &features)?.1))
}

/// Score already prepared input pairs, in order.
pub fn score_pairs(
    weights: &CanWeights,
    video_id: &str,
    pairs: &[ModelInputPair],
) -> Result<ScoreTimeline> {
    check_classifier(weights)?;
    let scores = pairs
        .par_iter()
        .map(|p| score_pair(weights, p))
        .collect::<Result<Vec<_>>>()?;
    ScoreTimeline::new(
        video_id,
        pairs.iter().map(|p| p.frame_index).collect(),
        scores,
    )
}

/// One score per consecutive frame pair of `seq`.
pub fn score_video(
    weights: &CanWeights,
    seq: &FrameSequence,
    bboxes: Option<&[BBox]>,
    side: usize,
) -> Result<ScoreTimeline> {
    check_classifier(weights)?;
    let pairs = sequence_to_inputs(seq, bboxes, side)?;
    score_pairs(weights, &seq.identity_id, &pairs)
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite {
            context: "detection scores".into(),
        });
    }
    Ok(())
}

/// Area under the ROC curve from midranks (Mann-Whitney U).
///
/// `labels[i]` is true for the positive (real) class.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum, so tied midranks stay integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share the midrank (i+1+j)/2
        let mid2 = (i + 1 + j) as u128;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        rank_sum2 += mid2 * tied_pos;
        i = j;
    }
    let n_pos = n_pos as u128;
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg as u128) as f64)
}

/// Fraction of samples where `score >= threshold` agrees with the label.
pub fn accuracy_at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_scores(scores, labels)?;
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|&(&s, &l)| (s >= threshold) == l)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Video score: median of the means of non-overlapping windows, the last
/// window possibly shorter.
pub fn aggregate_video(timeline: &ScoreTimeline, window_frames: usize) -> Result<f64> {
    if window_frames == 0 {
        return Err(Error::InvalidArgument(
            "window must be at least 1 frame".into(),
        ));
    }
    if timeline.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "timeline `{}` is empty",
            timeline.video_id
        )));
    }
    let mut means: Vec<f64> = timeline
        .scores
        .chunks(window_frames)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    Ok(median(&mut means))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Frame-level, pooled over all videos.
    pub auc: f64,
    pub accuracy: f64,
    pub threshold: f64,
    pub n_real_frames: usize,
    pub n_fake_frames: usize,
    /// AUC of aggregated video scores; absent when the videos are single-class.
    pub video_auc: Option<f64>,
    pub window: usize,
    pub n_videos: usize,
    pub split: String,
}

impl EvalReport {
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("auc", format!("{:.12}", self.auc));
        kv.set("accuracy", format!("{:.12}", self.accuracy));
        kv.set("threshold", self.threshold);
        kv.set("n_real_frames", self.n_real_frames);
        kv.set("n_fake_frames", self.n_fake_frames);
        kv.set(
            "video_auc",
            self.video_auc
                .map_or("none".to_string(), |a| format!("{a:.12}")),
        );
        kv.set("window", self.window);
        kv.set("n_videos", self.n_videos);
        kv.set("split", &self.split);
        kv
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_kv().save(path)
    }
}

/// Score every clip and compute pooled frame-level metrics.
///
/// `split` describes where the clips come from; the caller is responsible
/// for it being identity-disjoint from training.
pub fn evaluate_split(
    weights: &CanWeights,
    eval_set: &[PreparedClip],
    threshold: f64,
    window: usize,
    split: &str,
) -> Result<(EvalReport, Vec<ScoreTimeline>)> {
    check_classifier(weights)?;
    let mut labels = Vec::new();
    let mut video_labels = Vec::with_capacity(eval_set.len());
    for clip in eval_set {
        let real = match clip.label {
            Label::Real => true,
            Label::Fake => false,
            Label::Unlabeled => {
                return Err(Error::InvalidArgument(format!(
                    "clip {} has no real/fake label",
                    clip.name
                )))
            }
        };
        labels.extend(std::iter::repeat_n(real, clip.pairs.len()));
        video_labels.push(real);
    }
    let timelines = eval_set
        .iter()
        .map(|c| score_pairs(weights, &c.name, &c.pairs))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = timelines
        .iter()
        .flat_map(|t| t.scores.iter().copied())
        .collect();
    let n_real_frames = labels.iter().filter(|&&l| l).count();
    let video_scores = timelines
        .iter()
        .map(|t| aggregate_video(t, window))
        .collect::<Result<Vec<_>>>()?;
    let video_auc = if video_labels.iter().any(|&l| l) && video_labels.iter().any(|&l| !l) {
        Some(auc(&video_scores, &video_labels)?)
    } else {
        None
    };
    let report = EvalReport {
        auc: auc(&scores, &labels)?,
        accuracy: accuracy_at_threshold(&scores, &labels, threshold)?,
        threshold,
        n_real_frames,
        n_fake_frames: labels.len() - n_real_frames,
        video_auc,
        window,
        n_videos: eval_set.len(),
        split: split.to_string(),
    };
    Ok((report, timelines))
}

/// ROC operating points `(threshold, tpr, fpr)`, one per distinct score,
/// from `(inf, 0, 0)` down to the lowest score, which gives `(1, 1)`.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64, f64)>> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::InvalidArgument("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(f64::INFINITY, 0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((s, tp as f64 / n_pos, fp as f64 / n_neg));
    }
    Ok(points)
}

/// Trapezoidal area under `(fpr, tpr)` points.
pub fn trapezoid_area(points: &[(f64, f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].2 - w[0].2) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn svg_path(path: &Path) -> PathBuf {
    path.with_extension("svg")
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 360.0;
const MARGIN: f64 = 40.0;

/// Minimal line chart; `xs`/`ys` are mapped from the given ranges.
fn svg_chart(
    title: &str,
    xs: &[f64],
    ys: &[f64],
    x_range: (f64, f64),
    y_range: (f64, f64),
    extra: &str,
) -> String {
    let span = |(lo, hi): (f64, f64)| if hi > lo { hi - lo } else { 1.0 };
    let px = |x: f64| MARGIN + (x - x_range.0) / span(x_range) * (SVG_W - 2.0 * MARGIN);
    let py = |y: f64| SVG_H - MARGIN - (y - y_range.0) / span(y_range) * (SVG_H - 2.0 * MARGIN);
    let mut pts = String::new();
    for (&x, &y) in xs.iter().zip(ys) {
        let _ = write!(pts, "{:.2},{:.2} ", px(x), py(y));
    }
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        SVG_W - 2.0 * MARGIN,
        SVG_H - 2.0 * MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="25" font-size="14">{title}</text>"#
    );
    svg.push_str(&extra.replace("{y}", &format!("{:.2}", py(DEFAULT_THRESHOLD))));
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
        pts.trim_end()
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Write `frame_index,score` CSV at `path` and a line plot next to it (`.svg`).
pub fn export_timeline(timeline: &ScoreTimeline, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut csv = String::from("frame_index,score\n");
    for (i, s) in timeline.frame_indices.iter().zip(&timeline.scores) {
        let _ = writeln!(csv, "{i},{s:.12}");
    }
    write_text(path, &csv)?;
    let xs: Vec<f64> = timeline.frame_indices.iter().map(|&i| i as f64).collect();
    let x_range = (
        xs.first().copied().unwrap_or(0.0),
        xs.last().copied().unwrap_or(1.0),
    );
    let threshold_line = format!(
        r#"<line x1="{MARGIN}" x2="{}" y1="{{y}}" y2="{{y}}" stroke="gray" stroke-dasharray="4"/>{}"#,
        SVG_W - MARGIN,
        "\n"
    );
    let svg = svg_chart(
        &format!("score timeline: {}", escape(&timeline.video_id)),
        &xs,
        &timeline.scores,
        x_range,
        (0.0, 1.0),
        &threshold_line,
    );
    write_text(&svg_path(path), &svg)
}

/// Read back a timeline CSV written by [`export_timeline`].
pub fn read_timeline(path: impl AsRef<Path>) -> Result<ScoreTimeline> {
    let path = path.as_ref();
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (mut idx, mut scores) = (Vec::new(), Vec::new());
    for rec in reader.deserialize::<(usize, f64)>() {
        let (i, s) = rec.map_err(|e| Error::format(path, e.to_string()))?;
        idx.push(i);
        scores.push(s);
    }
    let id = path
        .file_stem()
        .map_or(String::new(), |s| s.to_string_lossy().into_owned());
    ScoreTimeline::new(id, idx, scores).map_err(|e| Error::format(path, e.to_string()))
}

/// Write `threshold,tpr,fpr` CSV at `path` and the ROC curve next to it (`.svg`).
pub fn export_roc(scores: &[f64], labels: &[bool], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let points = roc_points(scores, labels)?;
    let mut csv = String::from("threshold,tpr,fpr\n");
    for (t, tpr, fpr) in &points {
        let _ = writeln!(csv, "{t:.12},{tpr:.12},{fpr:.12}");
    }
    write_text(path, &csv)?;
    let fpr: Vec<f64> = points.iter().map(|p| p.2).collect();
    let tpr: Vec<f64> = points.iter().map(|p| p.1).collect();
    let diagonal = format!(
        r#"<line x1="{MARGIN}" y1="{}" x2="{}" y2="{MARGIN}" stroke="gray" stroke-dasharray="4"/>{}"#,
        SVG_H - MARGIN,
        SVG_W - MARGIN,
        "\n"
    );
    let svg = svg_chart(
        &format!("ROC (AUC {:.4})", trapezoid_area(&points)),
        &fpr,
        &tpr,
        (0.0, 1.0),
        (0.0, 1.0),
        &diagonal,
    );
    write_text(&svg_path(path), &svg)
}

/// Read back a ROC CSV written by [`export_roc`].
pub fn read_roc(path: impl AsRef<Path>) -> Result<Vec<(f64, f64, f64)>> {
    let path = path.as_ref();
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    reader
        .deserialize::<(f64, f64, f64)>()
        .map(|r| r.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}
