//! Frame normalization: face crops, motion (normalized difference) frames and
//! appearance (standardized) frames.
//!
//! Pixels are scaled to [0, 1] before any formula; 8-bit rounding only happens
//! at the crop/resize stage and at file boundaries.

mod io;

pub use io::{
    read_bbox_file, read_container, read_manifest, read_pulse_file, write_bbox_file,
    write_container, write_manifest, write_pulse_file, BboxMode, ManifestEntry, CONTAINER_MAGIC,
    CONTAINER_VERSION,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator guard of the normalized difference.
pub const DIFF_EPS: f64 = 1e-6;
/// Frames whose standard deviation falls below this are mapped to zeros.
pub const STD_FLOOR: f64 = 1e-8;

/// 8-bit RGB frame, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawFrame {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl RawFrame {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame extents must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} RGB frame needs {} bytes, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        Ok(RawFrame {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let pixels = std::iter::repeat_n(rgb, height * width).flatten().collect();
        RawFrame::new(height, width, pixels).expect("valid extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    /// Channel-first `[3, H, W]` tensor with values in [0, 1].
    pub fn to_unit_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = f64::from(px[c]) / 255.0;
            }
        }
        Tensor::new(&[3, self.height, self.width], data).expect("extents checked")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Real,
    Fake,
    Unlabeled,
}

impl Label {
    /// Training target: 1 for real faces, 0 for fakes.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Real => Some(1.0),
            Label::Fake => Some(0.0),
            Label::Unlabeled => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
            Label::Unlabeled => "unlabeled",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "real" => Some(Label::Real),
            "fake" => Some(Label::Fake),
            "unlabeled" => Some(Label::Unlabeled),
            _ => None,
        }
    }
}

/// A labeled clip of equally sized frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<RawFrame>,
    pub fps: f64,
    pub identity_id: String,
    pub label: Label,
    /// Per-frame blood-volume pulse of the face region, when known.
    pub pulse_truth: Option<Vec<f64>>,
}

impl FrameSequence {
    pub fn new(
        frames: Vec<RawFrame>,
        fps: f64,
        identity_id: impl Into<String>,
        label: Label,
        pulse_truth: Option<Vec<f64>>,
    ) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let (h, w) = (frames[0].height, frames[0].width);
        if let Some(i) = frames.iter().position(|f| f.height != h || f.width != w) {
            return Err(Error::InvalidArgument(format!(
                "frame {i} is {}x{}, expected {h}x{w}",
                frames[i].height, frames[i].width
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "fps must be positive, got {fps}"
            )));
        }
        if let Some(p) = &pulse_truth {
            if p.len() != frames.len() {
                return Err(Error::InvalidArgument(format!(
                    "pulse truth has {} values for {} frames",
                    p.len(),
                    frames.len()
                )));
            }
        }
        Ok(FrameSequence {
            frames,
            fps,
            identity_id: identity_id.into(),
            label,
            pulse_truth,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }
}

/// Face bounding box in pixels: top-left corner plus extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    /// Centered square of side `min(height, width)`.
    pub fn centered_square(height: usize, width: usize) -> BBox {
        let side = height.min(width);
        BBox {
            x: (width - side) / 2,
            y: (height - side) / 2,
            w: side,
            h: side,
        }
    }
}

/// One sample for the network: motion and appearance inputs at frame `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInputPair {
    pub motion: Tensor,
    pub appearance: Tensor,
    pub frame_index: usize,
}

/// Source coordinate for output index `i` under half-pixel-center alignment.
fn source_coord(i: usize, start: usize, extent: usize, side: usize) -> (usize, usize, f64) {
    let s = start as f64 + (i as f64 + 0.5) * extent as f64 / side as f64 - 0.5;
    let lo = start as f64;
    let hi = (start + extent - 1) as f64;
    let s = s.clamp(lo, hi);
    let s0 = s.floor();
    let i0 = s0 as usize;
    let i1 = (i0 + 1).min(start + extent - 1);
    (i0, i1, s - s0)
}

/// Crop `bbox` out of `frame` and resize it bilinearly to `side x side`.
pub fn crop_and_resize(frame: &RawFrame, bbox: BBox, side: usize) -> Result<RawFrame> {
    if bbox.w == 0 || bbox.h == 0 || bbox.x + bbox.w > frame.width || bbox.y + bbox.h > frame.height
    {
        return Err(Error::BboxOutOfBounds {
            frame: None,
            bbox: (bbox.x, bbox.y, bbox.w, bbox.h),
            width: frame.width,
            height: frame.height,
        });
    }
    if side == 0 {
        return Err(Error::InvalidArgument(
            "output side must be positive".into(),
        ));
    }
    let cols: Vec<_> = (0..side)
        .map(|j| source_coord(j, bbox.x, bbox.w, side))
        .collect();
    let mut out = Vec::with_capacity(side * side * 3);
    for i in 0..side {
        let (y0, y1, fy) = source_coord(i, bbox.y, bbox.h, side);
        for &(x0, x1, fx) in &cols {
            for c in 0..3 {
                let p = |y: usize, x: usize| f64::from(frame.get(y, x, c));
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RawFrame::new(side, side, out)
}

/// `(current - previous) / (current + previous + eps)` per element, pixels in [0, 1].
pub fn normalized_difference(current: &RawFrame, previous: &RawFrame) -> Result<Tensor> {
    if current.height != previous.height || current.width != previous.width {
        return Err(Error::shape(
            "motion_frame",
            format!(
                "{}x{} vs {}x{}",
                current.height, current.width, previous.height, previous.width
            ),
        ));
    }
    let cur = current.to_unit_tensor();
    let prev = previous.to_unit_tensor();
    let data = cur
        .data()
        .iter()
        .zip(prev.data())
        .map(|(&c, &p)| (c - p) / (c + p + DIFF_EPS))
        .collect();
    Tensor::new(cur.shape(), data)
}

/// Zero mean, unit (population) standard deviation over all values; a
/// near-constant input maps to all zeros.
pub fn standardize(t: &Tensor) -> Tensor {
    let n = t.len() as f64;
    let mean = t.sum() / n;
    let var = t
        .data()
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std < STD_FLOOR {
        return Tensor::zeros(t.shape());
    }
    t.map(|x| (x - mean) / std)
}

/// Motion-branch input for the pair `(previous, current)`.
pub fn motion_frame(current: &RawFrame, previous: &RawFrame) -> Result<Tensor> {
    Ok(standardize(&normalized_difference(current, previous)?))
}

/// Appearance-branch input for one frame.
pub fn appearance_frame(current: &RawFrame) -> Tensor {
    standardize(&current.to_unit_tensor())
}

/// Turn a clip into one input pair per frame index `1..T`.
///
/// Without boxes every frame gets the centered square crop.
pub fn sequence_to_inputs(
    seq: &FrameSequence,
    bboxes: Option<&[BBox]>,
    side: usize,
) -> Result<Vec<ModelInputPair>> {
    if let Some(b) = bboxes {
        if b.len() != seq.len() {
            return Err(Error::InvalidArgument(format!(
                "{} bounding boxes for {} frames",
                b.len(),
                seq.len()
            )));
        }
    }
    let default_box = BBox::centered_square(seq.height(), seq.width());
    let crops: Vec<RawFrame> = seq
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let bbox = bboxes.map_or(default_box, |b| b[i]);
            crop_and_resize(f, bbox, side).map_err(|e| match e {
                Error::BboxOutOfBounds {
                    bbox,
                    width,
                    height,
                    ..
                } => Error::BboxOutOfBounds {
                    frame: Some(i),
                    bbox,
                    width,
                    height,
                },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    (1..crops.len())
        .into_par_iter()
        .map(|t| {
            Ok(ModelInputPair {
                motion: motion_frame(&crops[t], &crops[t - 1])?,
                appearance: appearance_frame(&crops[t]),
                frame_index: t,
            })
        })
        .collect()
}

/// A clip reduced to network inputs, with the metadata training and
/// evaluation need. Raw frames are dropped to keep memory low.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedClip {
    /// Used in diagnostics and as the timeline id.
    pub name: String,
    pub identity_id: String,
    pub label: Label,
    pub pulse_truth: Option<Vec<f64>>,
    pub pairs: Vec<ModelInputPair>,
}

impl PreparedClip {
    pub fn new(
        name: impl Into<String>,
        seq: &FrameSequence,
        bboxes: Option<&[BBox]>,
        side: usize,
    ) -> Result<Self> {
        Ok(PreparedClip {
            name: name.into(),
            identity_id: seq.identity_id.clone(),
            label: seq.label,
            pulse_truth: seq.pulse_truth.clone(),
            pairs: sequence_to_inputs(seq, bboxes, side)?,
        })
    }
}

/// Prepare clips with centered crops, naming them `<identity>/<position>`.
pub fn prepare_clips(seqs: &[FrameSequence], side: usize) -> Result<Vec<PreparedClip>> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| PreparedClip::new(format!("{}/{i}", s.identity_id), s, None, side))
        .collect()
}
