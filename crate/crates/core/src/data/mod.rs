//! Sequence and annotation ingestion, physical-unit resampling, and
//! template/search patch extraction.
//!
//! On-disk layout per sequence directory:
//!
//! ```text
//! <seq>/frame_00000.pgm     zero-padded frames, binary PGM
//! <seq>/meta.txt            key=value sidecar: spacing_mm_per_px, fps
//! <seq>/gt_landmark_00.csv  annotations, header `frame,x,y`
//! ```
//!
//! Annotation coordinates are 0-indexed image pixels with `x` along
//! columns and `y` along rows, subpixel allowed; the header spells the
//! order out and the loader converts exactly once at this boundary.

pub mod pgm;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{bilinear_fetch, Grid2};
use crate::nn::tensor::Tensor;

use pgm::PgmImage;

/// Subpixel image position: `x` along columns, `y` along rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Point {
        Point { x, y }
    }

    /// As `(row, col)`.
    pub fn row_col(&self) -> (f64, f64) {
        (self.y, self.x)
    }

    pub fn from_row_col(rc: (f64, f64)) -> Point {
        Point { x: rc.1, y: rc.0 }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// One grayscale frame, intensities normalized to `[0, 1]`.
///
/// `maxval` remembers the integer quantization so PGM round trips stay
/// bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub maxval: u16,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn from_pgm(img: &PgmImage) -> Frame {
        let scale = 1.0 / img.maxval as f32;
        Frame {
            height: img.height,
            width: img.width,
            maxval: img.maxval,
            data: img.data.iter().map(|&v| v as f32 * scale).collect(),
        }
    }

    pub fn to_pgm(&self) -> PgmImage {
        let maxval = self.maxval;
        let data = self
            .data
            .iter()
            .map(|&v| (v * maxval as f32).round().clamp(0.0, maxval as f32) as u16)
            .collect();
        PgmImage {
            width: self.width,
            height: self.height,
            maxval,
            data,
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn mean(&self) -> f32 {
        let sum: f64 = self.data.iter().map(|&v| v as f64).sum();
        (sum / self.data.len() as f64) as f32
    }
}

/// An ordered run of frames with shared geometry and physical spacing.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub id: String,
    pub spacing_mm_per_px: f64,
    pub fps: f64,
    pub frames: Vec<Frame>,
}

impl Sequence {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::data(format!("sequence {}: no frames", self.id)));
        }
        if !(self.spacing_mm_per_px > 0.0) {
            return Err(Error::data(format!(
                "sequence {}: spacing must be > 0, got {}",
                self.id, self.spacing_mm_per_px
            )));
        }
        let (h, w) = (self.frames[0].height, self.frames[0].width);
        for (i, f) in self.frames.iter().enumerate() {
            if f.height != h || f.width != w {
                return Err(Error::data(format!(
                    "sequence {}: frame {i} is {}x{} but frame 0 is {h}x{w}",
                    self.id, f.height, f.width
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }
}

/// One landmark annotation on one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub frame: usize,
    pub position: Point,
}

/// Load a sequence directory: numbered PGM frames plus a `meta.txt`
/// sidecar with `spacing_mm_per_px` and `fps`.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let meta = parse_key_values(&dir.join("meta.txt"))?;
    let spacing: f64 = meta_field(&meta, "spacing_mm_per_px", dir)?;
    let fps: f64 = meta_field(&meta, "fps", dir)?;

    let mut frame_files: Vec<(usize, PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(idx) = name
            .strip_prefix("frame_")
            .and_then(|rest| rest.strip_suffix(".pgm"))
            .and_then(|digits| digits.parse::<usize>().ok())
        {
            frame_files.push((idx, entry.path()));
        }
    }
    if frame_files.is_empty() {
        return Err(Error::data(format!("{}: no frame_*.pgm files", dir.display())));
    }
    frame_files.sort_by_key(|(idx, _)| *idx);
    for (want, (got, path)) in frame_files.iter().enumerate() {
        if *got != want {
            return Err(Error::data(format!(
                "{}: frame numbering gap, expected frame {want} but found {}",
                dir.display(),
                path.display()
            )));
        }
    }

    let frames: Vec<Frame> = frame_files
        .iter()
        .map(|(_, path)| Ok(Frame::from_pgm(&pgm::read_pgm(path)?)))
        .collect::<Result<_>>()?;

    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".to_string());
    let seq = Sequence {
        id,
        spacing_mm_per_px: spacing,
        fps,
        frames,
    };
    seq.validate()?;
    Ok(seq)
}

/// Write a sequence in the on-disk layout [`load_sequence`] reads.
pub fn save_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    seq.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta_path = dir.join("meta.txt");
    let meta = format!(
        "spacing_mm_per_px={}\nfps={}\n",
        seq.spacing_mm_per_px, seq.fps
    );
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
    for (i, frame) in seq.frames.iter().enumerate() {
        let path = dir.join(format!("frame_{i:05}.pgm"));
        pgm::write_pgm(&path, &frame.to_pgm())?;
    }
    Ok(())
}

fn parse_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::data(format!("{}:{}: expected key=value, got {line:?}", path.display(), lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn meta_field(meta: &BTreeMap<String, String>, key: &str, dir: &Path) -> Result<f64> {
    let raw = meta.get(key).ok_or_else(|| {
        Error::data(format!("{}: meta.txt is missing {key}", dir.display()))
    })?;
    raw.parse::<f64>()
        .map_err(|_| Error::data(format!("{}: meta.txt {key}={raw:?} is not a number", dir.display())))
}

/// Parse a `frame,x,y` annotation CSV without bounds validation (for
/// consumers that have no image at hand, like trajectory evaluation).
pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    load_annotations_impl(path, None)
}

/// Load a `frame,x,y` annotation CSV, validating frame indices against
/// `frame_count` and positions against the `(width, height)` bounds.
pub fn load_annotations(path: &Path, width: usize, height: usize, frame_count: usize) -> Result<Vec<Annotation>> {
    load_annotations_impl(path, Some((width, height, frame_count)))
}

fn load_annotations_impl(path: &Path, bounds: Option<(usize, usize, usize)>) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "frame,x,y" => {}
        Some((_, header)) => {
            return Err(Error::data(format!(
                "{}: expected header 'frame,x,y', got {header:?}",
                path.display()
            )))
        }
        None => return Err(Error::data(format!("{}: empty annotation file", path.display()))),
    }
    let mut out = Vec::new();
    for (lineno, line) in lines {
        let row = lineno + 1; // 1-based, matching editors
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::data(format!(
                "{}: row {row}: expected 3 fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        let frame: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("{}: row {row}: bad frame index {:?}", path.display(), fields[0])))?;
        let x: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("{}: row {row}: bad x {:?}", path.display(), fields[1])))?;
        let y: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("{}: row {row}: bad y {:?}", path.display(), fields[2])))?;
        if let Some((width, height, frame_count)) = bounds {
            if frame >= frame_count {
                return Err(Error::data(format!(
                    "{}: row {row}: frame {frame} outside sequence of {frame_count} frames",
                    path.display()
                )));
            }
            if !(0.0..width as f64).contains(&x) || !(0.0..height as f64).contains(&y) {
                return Err(Error::data(format!(
                    "{}: row {row}: position ({x}, {y}) outside {width}x{height} image",
                    path.display()
                )));
            }
        }
        out.push(Annotation {
            frame,
            position: Point::new(x, y),
        });
    }
    Ok(out)
}

/// Write annotations in the `frame,x,y` format.
pub fn save_annotations(path: &Path, annotations: &[Annotation]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("frame,x,y\n");
    for a in annotations {
        text.push_str(&format!("{},{},{}\n", a.frame, a.position.x, a.position.y));
    }
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Bilinearly resample a sequence to a new isotropic spacing, scaling
/// per axis. Output extents below `min_extent` are a configuration
/// error. Equal source and target spacing returns the frames unchanged.
pub fn resample(seq: &Sequence, target_spacing: f64, min_extent: usize) -> Result<Sequence> {
    if !(target_spacing > 0.0) {
        return Err(Error::config(format!("target spacing must be > 0, got {target_spacing}")));
    }
    seq.validate()?;
    if seq.spacing_mm_per_px == target_spacing {
        return Ok(seq.clone());
    }
    let scale = seq.spacing_mm_per_px / target_spacing;
    let out_w = (seq.width() as f64 * scale).round() as usize;
    let out_h = (seq.height() as f64 * scale).round() as usize;
    if out_w < min_extent || out_h < min_extent {
        return Err(Error::config(format!(
            "resampling {}x{} by {scale:.4} gives {out_w}x{out_h}, below the minimum extent {min_extent}",
            seq.width(),
            seq.height()
        )));
    }
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let mut data = vec![0.0f32; out_w * out_h];
            for r in 0..out_h {
                let src_r = r as f64 / scale;
                for c in 0..out_w {
                    let src_c = c as f64 / scale;
                    data[r * out_w + c] = bilinear_fetch(f.height, f.width, src_r, src_c, |rr, cc| {
                        f.at(rr, cc) as f64
                    }) as f32;
                }
            }
            Frame {
                height: out_h,
                width: out_w,
                maxval: f.maxval,
                data,
            }
        })
        .collect();
    Ok(Sequence {
        id: seq.id.clone(),
        spacing_mm_per_px: target_spacing,
        fps: seq.fps,
        frames,
    })
}

/// Scale annotation coordinates by the same factor a resample applied.
pub fn scale_annotations(annotations: &[Annotation], src_spacing: f64, target_spacing: f64) -> Vec<Annotation> {
    let scale = src_spacing / target_spacing;
    annotations
        .iter()
        .map(|a| Annotation {
            frame: a.frame,
            position: Point::new(a.position.x * scale, a.position.y * scale),
        })
        .collect()
}

/// A square patch cropped from a frame, with the coordinate offset that
/// maps patch coordinates back to image coordinates exactly.
#[derive(Debug, Clone)]
pub struct Patch {
    pub data: Grid2<f32>,
    /// Image coordinates of patch pixel (0, 0), as `(row, col)`; may be
    /// negative when the window extends past the image.
    pub offset: (i64, i64),
    /// Fraction of patch pixels that fell outside the frame and were
    /// filled with the frame mean.
    pub fill_fraction: f64,
}

impl Patch {
    pub fn patch_to_image(&self, patch_rc: (f64, f64)) -> (f64, f64) {
        (patch_rc.0 + self.offset.0 as f64, patch_rc.1 + self.offset.1 as f64)
    }

    pub fn image_to_patch(&self, image_rc: (f64, f64)) -> (f64, f64) {
        (image_rc.0 - self.offset.0 as f64, image_rc.1 - self.offset.1 as f64)
    }

    /// As a `(1, 1, size, size)` network input.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(
            &[1, 1, self.data.rows(), self.data.cols()],
            self.data.data().to_vec(),
        )
        .expect("grid length matches shape")
    }
}

/// A sequence together with its per-landmark ground-truth files.
#[derive(Debug, Clone)]
pub struct SequenceWithTruth {
    pub sequence: Sequence,
    /// `(landmark name, annotations)`, name derived from the file stem.
    pub truths: Vec<(String, Vec<Annotation>)>,
}

/// Load a sequence directory plus every `gt_landmark_*.csv` beside it.
pub fn load_sequence_with_truth(dir: &Path) -> Result<SequenceWithTruth> {
    let sequence = load_sequence(dir)?;
    let mut truth_files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .map(|n| {
                    let n = n.to_string_lossy();
                    n.starts_with("gt_landmark_") && n.ends_with(".csv")
                })
                .unwrap_or(false)
        })
        .collect();
    truth_files.sort();
    let mut truths = Vec::new();
    for path in truth_files {
        let annotations = load_annotations(&path, sequence.width(), sequence.height(), sequence.frames.len())?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "gt_landmark_00".to_string());
        truths.push((name.trim_start_matches("gt_").to_string(), annotations));
    }
    Ok(SequenceWithTruth { sequence, truths })
}

/// Load every sequence directory under a split directory, sorted by
/// name for determinism.
pub fn load_split_dir(dir: &Path) -> Result<Vec<SequenceWithTruth>> {
    let mut seq_dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("meta.txt").is_file())
        .collect();
    seq_dirs.sort();
    if seq_dirs.is_empty() {
        return Err(Error::data(format!(
            "{}: no sequence directories (expected subdirectories with meta.txt)",
            dir.display()
        )));
    }
    seq_dirs.iter().map(|d| load_sequence_with_truth(d)).collect()
}

/// Crop a `size x size` window centered at the pixel nearest `center`.
/// Out-of-bounds area is filled with the frame mean.
pub fn crop(frame: &Frame, center: Point, size: usize) -> Result<Patch> {
    if size == 0 {
        return Err(Error::config("crop size must be >= 1".to_string()));
    }
    let (h, w) = (frame.height as i64, frame.width as i64);
    let (cy, cx) = (center.y.round() as i64, center.x.round() as i64);
    if !(0.0..frame.width as f64).contains(&center.x) || !(0.0..frame.height as f64).contains(&center.y) {
        return Err(Error::usage(format!(
            "crop center ({}, {}) outside {}x{} image",
            center.x, center.y, frame.width, frame.height
        )));
    }
    let half = (size as i64 - 1) / 2;
    let offset = (cy - half, cx - half);
    let fill = frame.mean();
    let mut data = Grid2::new(size, size);
    let mut outside = 0usize;
    for r in 0..size as i64 {
        let src_r = offset.0 + r;
        for c in 0..size as i64 {
            let src_c = offset.1 + c;
            let v = if src_r >= 0 && src_r < h && src_c >= 0 && src_c < w {
                frame.at(src_r as usize, src_c as usize)
            } else {
                outside += 1;
                fill
            };
            data.set(r as usize, c as usize, v);
        }
    }
    Ok(Patch {
        data,
        offset,
        fill_fraction: outside as f64 / (size * size) as f64,
    })
}

/// Template crop: `size` defaults to 127 in the tracker configuration.
pub fn crop_template(frame: &Frame, center: Point, size: usize) -> Result<Patch> {
    crop(frame, center, size)
}

/// Search crop around the initial landmark; `size` defaults to 407. The
/// returned offset maps patch coordinates back to image coordinates.
pub fn crop_search(frame: &Frame, initial_center: Point, size: usize) -> Result<Patch> {
    crop(frame, initial_center, size)
}
