//! Frame containers, dataset manifests and their CSV sidecars.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::{BBox, FrameSequence, Label, RawFrame};
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 7] = b"DFOP-V\0";
pub const CONTAINER_VERSION: u16 = 1;
const HEADER_LEN: usize = 7 + 2 + 12 + 2;

/// Write a clip as a raw RGB frame container.
pub fn write_container(seq: &FrameSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let fps = seq.fps.round();
    if (seq.fps - fps).abs() > 1e-9 || !(1.0..=255.0).contains(&fps) {
        return Err(Error::format(
            path,
            format!(
                "container fps must be an integer in 1..=255, got {}",
                seq.fps
            ),
        ));
    }
    let frame_bytes = seq.height() * seq.width() * 3;
    let mut out = Vec::with_capacity(HEADER_LEN + seq.len() * frame_bytes);
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    for v in [seq.len(), seq.height(), seq.width()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(3);
    out.push(fps as u8);
    for f in &seq.frames {
        out.extend_from_slice(f.pixels());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a frame container. Identity is the file stem; the label is unknown.
pub fn read_container(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated container header"));
    }
    if &bytes[..7] != CONTAINER_MAGIC {
        return Err(Error::format(path, "bad magic, not a frame container"));
    }
    let version = u16::from_le_bytes([bytes[7], bytes[8]]);
    if version != CONTAINER_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (t, h, w) = (u32_at(9), u32_at(13), u32_at(17));
    let channels = bytes[21];
    let fps = bytes[22];
    if channels != 3 {
        return Err(Error::format(
            path,
            format!("expected 3 channels, got {channels}"),
        ));
    }
    if fps == 0 || t < 2 || h == 0 || w == 0 {
        return Err(Error::format(
            path,
            format!("invalid header: {t} frames of {h}x{w} at {fps} fps"),
        ));
    }
    let frame_bytes = h * w * 3;
    let body = &bytes[HEADER_LEN..];
    if body.len() != t * frame_bytes {
        return Err(Error::format(
            path,
            format!(
                "payload has {} bytes, header declares {}",
                body.len(),
                t * frame_bytes
            ),
        ));
    }
    let frames = body
        .chunks_exact(frame_bytes)
        .map(|px| RawFrame::new(h, w, px.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FrameSequence::new(frames, f64::from(fps), stem, Label::Unlabeled, None)
        .map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BboxMode {
    /// Centered square crop of side `min(H, W)`.
    Center,
    /// Per-frame boxes from a `frame_index,x,y,w,h` CSV.
    File(PathBuf),
}

/// One manifest row. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub identity_id: String,
    pub label: Label,
    pub bbox_mode: BboxMode,
}

impl ManifestEntry {
    /// Sidecar holding the ground-truth pulse of a synthetic clip.
    pub fn pulse_path(&self) -> PathBuf {
        self.path.with_extension("pulse.csv")
    }

    /// Load the clip with its manifest label, pulse sidecar (when present)
    /// and bounding boxes.
    pub fn load(&self, base_dir: &Path) -> Result<(FrameSequence, Option<Vec<BBox>>)> {
        let mut seq = read_container(base_dir.join(&self.path))?;
        seq.identity_id = self.identity_id.clone();
        seq.label = self.label;
        let pulse = base_dir.join(self.pulse_path());
        if pulse.exists() {
            let values = read_pulse_file(&pulse)?;
            if values.len() != seq.len() {
                return Err(Error::format(
                    &pulse,
                    format!("{} pulse values for {} frames", values.len(), seq.len()),
                ));
            }
            seq.pulse_truth = Some(values);
        }
        let boxes = match &self.bbox_mode {
            BboxMode::Center => None,
            BboxMode::File(p) => Some(read_bbox_file(base_dir.join(p), seq.len())?),
        };
        Ok((seq, boxes))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

fn expect_header(
    path: &Path,
    reader: &mut csv::Reader<std::fs::File>,
    want: &[&str],
) -> Result<()> {
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().collect::<Vec<_>>() != want {
        return Err(Error::format(
            path,
            format!("expected header `{}`", want.join(",")),
        ));
    }
    Ok(())
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

const MANIFEST_HEADER: [&str; 5] = ["path", "identity_id", "label", "bbox_mode", "bbox_path"];

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    expect_header(path, &mut reader, &MANIFEST_HEADER)?;
    let mut entries = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row = line + 2;
        let label = Label::parse(&record[2])
            .filter(|l| *l != Label::Unlabeled)
            .ok_or_else(|| Error::format(path, format!("row {row}: label `{}`", &record[2])))?;
        let bbox_mode = match &record[3] {
            "center" => BboxMode::Center,
            "file" if !record[4].is_empty() => BboxMode::File(PathBuf::from(&record[4])),
            other => {
                return Err(Error::format(
                    path,
                    format!(
                        "row {row}: bbox_mode `{other}` with bbox_path `{}`",
                        &record[4]
                    ),
                ))
            }
        };
        entries.push(ManifestEntry {
            path: PathBuf::from(&record[0]),
            identity_id: record[1].to_string(),
            label,
            bbox_mode,
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(MANIFEST_HEADER)
        .map_err(|e| csv_err(path, e))?;
    for e in entries {
        let (mode, bbox_path) = match &e.bbox_mode {
            BboxMode::Center => ("center", String::new()),
            BboxMode::File(p) => ("file", p.to_string_lossy().into_owned()),
        };
        w.write_record([
            e.path.to_string_lossy().as_ref(),
            e.identity_id.as_str(),
            e.label.as_str(),
            mode,
            bbox_path.as_str(),
        ])
        .map_err(|err| csv_err(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read `frame_index,x,y,w,h` rows; every frame `0..frames` must appear once.
pub fn read_bbox_file(path: impl AsRef<Path>, frames: usize) -> Result<Vec<BBox>> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    expect_header(path, &mut reader, &["frame_index", "x", "y", "w", "h"])?;
    let mut boxes = vec![None; frames];
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let nums: Vec<usize> = record
            .iter()
            .map(|f| f.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("bad box row {record:?}: {e}")))?;
        if nums.len() != 5 {
            return Err(Error::format(path, format!("bad box row {record:?}")));
        }
        let slot = boxes.get_mut(nums[0]).ok_or_else(|| {
            Error::format(
                path,
                format!("frame index {} beyond {frames} frames", nums[0]),
            )
        })?;
        *slot = Some(BBox {
            x: nums[1],
            y: nums[2],
            w: nums[3],
            h: nums[4],
        });
    }
    boxes
        .into_iter()
        .enumerate()
        .map(|(i, b)| b.ok_or_else(|| Error::format(path, format!("no box for frame {i}"))))
        .collect()
}

pub fn write_bbox_file(path: impl AsRef<Path>, boxes: &[BBox]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("frame_index,x,y,w,h\n");
    for (i, b) in boxes.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{},{}\n", b.x, b.y, b.w, b.h));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a `frame_index,bvp` sidecar.
pub fn read_pulse_file(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    expect_header(path, &mut reader, &["frame_index", "bvp"])?;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let idx: usize = record[0]
            .parse()
            .map_err(|_| Error::format(path, format!("bad frame index `{}`", &record[0])))?;
        if idx != values.len() {
            return Err(Error::format(
                path,
                format!("frame index {idx} out of order"),
            ));
        }
        let v: f64 = record[1]
            .parse()
            .map_err(|_| Error::format(path, format!("bad pulse value `{}`", &record[1])))?;
        values.push(v);
    }
    Ok(values)
}

pub fn write_pulse_file(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut file =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(file, "frame_index,bvp")?;
        for (i, v) in values.iter().enumerate() {
            // round-trip exact
            writeln!(file, "{i},{v:?}")?;
        }
        file.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
