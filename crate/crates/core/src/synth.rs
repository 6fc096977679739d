//! Deterministic generator of ultrasound-like test sequences with exact
//! ground-truth landmark trajectories.
//!
//! Scenes are multiplicative speckle (a smoothed, exponentiated noise
//! field, static across frames) carrying soft-edged structures that move
//! on analytic sinusoid-plus-drift paths, plus per-frame additive noise.
//! Because trajectories are analytic, any tracking error measured against
//! them belongs to the tracker.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Annotation, Frame, Point, Sequence};
use crate::error::{Error, Result};

/// Per-frame landmark displacement above which the generator warns that
/// the motion outruns what a displacement-bounded tracker can follow.
pub const STEP_WARN_PX: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StructureShape {
    /// Gaussian blob; `radius_px` is its sigma.
    Blob { radius_px: f64 },
    /// Soft-edged ellipse (vessel cross-section), darker than background
    /// when contrast is negative.
    VesselEllipse { r_row_px: f64, r_col_px: f64 },
}

/// Why a structure is in the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureRole {
    /// The landmark to track; emits a ground-truth trajectory.
    Target,
    /// Shares appearance with a target and exists to lure the tracker.
    Distractor,
    /// Background anatomy.
    Clutter,
}

/// Sinusoid plus optional linear drift, amplitudes in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub amp_mm: (f64, f64),
    pub period_frames: f64,
    pub phase: f64,
    pub drift_mm_per_frame: (f64, f64),
}

impl Motion {
    pub fn none() -> Motion {
        Motion {
            amp_mm: (0.0, 0.0),
            period_frames: 1.0,
            phase: 0.0,
            drift_mm_per_frame: (0.0, 0.0),
        }
    }
}

impl Motion {
    /// Displacement at frame `t` in pixels, `(row, col)`.
    pub fn displacement_px(&self, t: usize, spacing: f64) -> (f64, f64) {
        let angle = 2.0 * std::f64::consts::PI * t as f64 / self.period_frames + self.phase;
        let s = angle.sin();
        (
            self.amp_mm.0 / spacing * s + self.drift_mm_per_frame.0 / spacing * t as f64,
            self.amp_mm.1 / spacing * s + self.drift_mm_per_frame.1 / spacing * t as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    pub name: String,
    pub role: StructureRole,
    pub shape: StructureShape,
    /// Base position `(row, col)` in pixels.
    pub base_px: (f64, f64),
    /// Multiplicative intensity contrast; negative darkens.
    pub contrast: f64,
    /// Rides the global tissue motion (the speckle bed moves with it).
    pub attached: bool,
    /// Own motion on top: relative to the tissue when attached, absolute
    /// otherwise.
    pub motion: Motion,
}

impl Structure {
    /// Analytic position at frame `t`, `(row, col)` pixels.
    pub fn position(&self, t: usize, spacing: f64, global: &Motion) -> (f64, f64) {
        let own = self.motion.displacement_px(t, spacing);
        let tissue = if self.attached {
            global.displacement_px(t, spacing)
        } else {
            (0.0, 0.0)
        };
        (
            self.base_px.0 + tissue.0 + own.0,
            self.base_px.1 + tissue.1 + own.1,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub spacing_mm_per_px: f64,
    pub fps: f64,
    pub frame_count: usize,
    pub seed: u64,
    /// Log-amplitude of the multiplicative speckle field.
    pub speckle_amp: f64,
    /// Standard deviation of the per-frame additive noise.
    pub noise_level: f64,
    /// Tissue motion: rigidly displaces the speckle bed and every
    /// attached structure, like breathing moves the whole neighborhood.
    pub global_motion: Motion,
    pub structures: Vec<Structure>,
}

impl SceneSpec {
    /// Analytic position of structure `i` at frame `t`.
    pub fn position_of(&self, i: usize, t: usize) -> (f64, f64) {
        self.structures[i].position(t, self.spacing_mm_per_px, &self.global_motion)
    }
}

/// Ground truth for one tracked landmark.
#[derive(Debug, Clone)]
pub struct LandmarkTruth {
    pub name: String,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug)]
pub struct Generated {
    pub sequence: Sequence,
    pub truths: Vec<LandmarkTruth>,
    pub warnings: Vec<String>,
}

const BACKGROUND_LEVEL: f64 = 0.45;

/// Render a scene spec into a sequence plus per-frame ground truth.
pub fn generate(spec: &SceneSpec) -> Result<Generated> {
    if spec.width == 0 || spec.height == 0 || spec.frame_count == 0 {
        return Err(Error::config(format!(
            "scene {} has a degenerate size {}x{}x{}",
            spec.id, spec.width, spec.height, spec.frame_count
        )));
    }
    if !(spec.spacing_mm_per_px > 0.0) {
        return Err(Error::config(format!("scene {}: spacing must be > 0", spec.id)));
    }
    let (w, h) = (spec.width, spec.height);

    // Trajectories first, so bad specs fail before rendering.
    let mut warnings = Vec::new();
    for s in &spec.structures {
        let mut prev: Option<(f64, f64)> = None;
        let mut worst_step = 0.0f64;
        for t in 0..spec.frame_count {
            let p = s.position(t, spec.spacing_mm_per_px, &spec.global_motion);
            if !(0.0..h as f64).contains(&p.0) || !(0.0..w as f64).contains(&p.1) {
                return Err(Error::config(format!(
                    "scene {}: structure {} leaves the {}x{} image at frame {t} (position {:.1}, {:.1})",
                    spec.id, s.name, w, h, p.0, p.1
                )));
            }
            if let Some(q) = prev {
                worst_step = worst_step.max(((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt());
            }
            prev = Some(p);
        }
        if worst_step >= STEP_WARN_PX {
            warnings.push(format!(
                "scene {}: structure {} moves {worst_step:.1} px in one frame, at or above the {STEP_WARN_PX} px displacement bound",
                spec.id, s.name
            ));
        }
    }

    let speckle = speckle_field(w, h, spec.seed, spec.speckle_amp);

    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for t in 0..spec.frame_count {
        // The speckle bed displaces rigidly with the tissue: sample the
        // static field at the back-shifted position.
        let shift = spec.global_motion.displacement_px(t, spec.spacing_mm_per_px);
        let mut img = vec![0.0f64; w * h];
        for r in 0..h {
            let src_r = r as f64 - shift.0;
            for c in 0..w {
                let src_c = c as f64 - shift.1;
                let v = crate::grid::bilinear_fetch(h, w, src_r, src_c, |rr, cc| speckle[rr * w + cc]);
                img[r * w + c] = BACKGROUND_LEVEL * v;
            }
        }
        for s in &spec.structures {
            apply_structure(&mut img, w, h, s, t, spec.spacing_mm_per_px, &spec.global_motion);
        }
        noise_rng.set_stream(t as u64 + 1);
        let mut data = Vec::with_capacity(w * h);
        if spec.noise_level > 0.0 {
            for v in &img {
                let n: f64 = noise_rng.sample::<f64, _>(StandardNormal) * spec.noise_level;
                data.push(quantize(v + n));
            }
        } else {
            data.extend(img.iter().map(|&v| quantize(v)));
        }
        frames.push(Frame {
            height: h,
            width: w,
            maxval: 255,
            data,
        });
    }

    let truths = spec
        .structures
        .iter()
        .filter(|s| s.role == StructureRole::Target)
        .map(|s| LandmarkTruth {
            name: s.name.clone(),
            annotations: (0..spec.frame_count)
                .map(|t| {
                    let (row, col) = s.position(t, spec.spacing_mm_per_px, &spec.global_motion);
                    Annotation {
                        frame: t,
                        position: Point::new(col, row),
                    }
                })
                .collect(),
        })
        .collect();

    Ok(Generated {
        sequence: Sequence {
            id: spec.id.clone(),
            spacing_mm_per_px: spec.spacing_mm_per_px,
            fps: spec.fps,
            frames,
        },
        truths,
        warnings,
    })
}

fn quantize(v: f64) -> f32 {
    let level = (v.clamp(0.0, 1.0) * 255.0).round() as u16;
    level as f32 / 255.0
}

/// Static multiplicative speckle: white noise smoothed twice with a
/// [1 2 1]/4 kernel per axis, then exponentiated.
fn speckle_field(w: usize, h: usize, seed: u64, amp: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field: Vec<f64> = (0..w * h).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    for _ in 0..2 {
        smooth_121(&mut field, w, h);
    }
    field.into_iter().map(|v| (amp * v).exp()).collect()
}

fn smooth_121(field: &mut [f64], w: usize, h: usize) {
    let mut tmp = vec![0.0f64; field.len()];
    for r in 0..h {
        for c in 0..w {
            let l = field[r * w + c.saturating_sub(1)];
            let m = field[r * w + c];
            let rr = field[r * w + (c + 1).min(w - 1)];
            tmp[r * w + c] = 0.25 * l + 0.5 * m + 0.25 * rr;
        }
    }
    for c in 0..w {
        for r in 0..h {
            let u = tmp[r.saturating_sub(1) * w + c];
            let m = tmp[r * w + c];
            let d = tmp[(r + 1).min(h - 1) * w + c];
            field[r * w + c] = 0.25 * u + 0.5 * m + 0.25 * d;
        }
    }
}

/// Multiply the structure's soft profile into the image near its current
/// position; evaluation is limited to a bounding box where the profile
/// is non-negligible.
fn apply_structure(img: &mut [f64], w: usize, h: usize, s: &Structure, t: usize, spacing: f64, global: &Motion) {
    let (pr, pc) = s.position(t, spacing, global);
    let (extent_r, extent_c) = match s.shape {
        StructureShape::Blob { radius_px } => (radius_px * 4.0, radius_px * 4.0),
        StructureShape::VesselEllipse { r_row_px, r_col_px } => (r_row_px * 1.8, r_col_px * 1.8),
    };
    let r0 = (pr - extent_r).floor().max(0.0) as usize;
    let r1 = ((pr + extent_r).ceil() as usize).min(h - 1);
    let c0 = (pc - extent_c).floor().max(0.0) as usize;
    let c1 = ((pc + extent_c).ceil() as usize).min(w - 1);
    for r in r0..=r1 {
        let dr = r as f64 - pr;
        for c in c0..=c1 {
            let dc = c as f64 - pc;
            let profile = match s.shape {
                StructureShape::Blob { radius_px } => {
                    (-(dr * dr + dc * dc) / (2.0 * radius_px * radius_px)).exp()
                }
                StructureShape::VesselEllipse { r_row_px, r_col_px } => {
                    let q = ((dr / r_row_px).powi(2) + (dc / r_col_px).powi(2)).sqrt();
                    // Soft-edged disc: ~1 inside, 0 outside, 10% edge.
                    1.0 / (1.0 + ((q - 1.0) / 0.1).exp())
                }
            };
            img[r * w + c] *= 1.0 + s.contrast * profile;
        }
    }
}

// --- scene spec serialization (key=value text) ---

pub fn format_scene(spec: &SceneSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "id={}", spec.id);
    let _ = writeln!(out, "width={}", spec.width);
    let _ = writeln!(out, "height={}", spec.height);
    let _ = writeln!(out, "spacing_mm_per_px={}", spec.spacing_mm_per_px);
    let _ = writeln!(out, "fps={}", spec.fps);
    let _ = writeln!(out, "frame_count={}", spec.frame_count);
    let _ = writeln!(out, "seed={}", spec.seed);
    let _ = writeln!(out, "speckle_amp={}", spec.speckle_amp);
    let _ = writeln!(out, "noise_level={}", spec.noise_level);
    let _ = writeln!(
        out,
        "global_motion={},{},{},{}",
        spec.global_motion.amp_mm.0,
        spec.global_motion.amp_mm.1,
        spec.global_motion.period_frames,
        spec.global_motion.phase
    );
    let _ = writeln!(
        out,
        "global_drift={},{}",
        spec.global_motion.drift_mm_per_frame.0, spec.global_motion.drift_mm_per_frame.1
    );
    for (i, s) in spec.structures.iter().enumerate() {
        let role = match s.role {
            StructureRole::Target => "target",
            StructureRole::Distractor => "distractor",
            StructureRole::Clutter => "clutter",
        };
        let shape = match s.shape {
            StructureShape::Blob { radius_px } => format!("blob:{radius_px}"),
            StructureShape::VesselEllipse { r_row_px, r_col_px } => format!("vessel:{r_row_px}:{r_col_px}"),
        };
        let _ = writeln!(out, "structure.{i}.name={}", s.name);
        let _ = writeln!(out, "structure.{i}.role={role}");
        let _ = writeln!(out, "structure.{i}.shape={shape}");
        let _ = writeln!(out, "structure.{i}.base_px={},{}", s.base_px.0, s.base_px.1);
        let _ = writeln!(out, "structure.{i}.contrast={}", s.contrast);
        let _ = writeln!(out, "structure.{i}.attached={}", u8::from(s.attached));
        let _ = writeln!(
            out,
            "structure.{i}.motion={},{},{},{}",
            s.motion.amp_mm.0, s.motion.amp_mm.1, s.motion.period_frames, s.motion.phase
        );
        let _ = writeln!(
            out,
            "structure.{i}.drift={},{}",
            s.motion.drift_mm_per_frame.0, s.motion.drift_mm_per_frame.1
        );
    }
    out
}

pub fn parse_scene(text: &str) -> Result<SceneSpec> {
    let mut map: std::collections::BTreeMap<&str, &str> = std::collections::BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::data(format!("scene file: expected key=value, got {line:?}")))?;
        map.insert(k.trim(), v.trim());
    }
    let get = |key: &str| -> Result<&str> {
        map.get(key)
            .copied()
            .ok_or_else(|| Error::data(format!("scene file: missing {key}")))
    };
    let parse_f64 = |key: &str| -> Result<f64> {
        get(key)?
            .parse()
            .map_err(|_| Error::data(format!("scene file: {key} is not a number")))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::data(format!("scene file: {key} is not an integer")))
    };
    let parse_pair = |raw: &str, key: &str| -> Result<(f64, f64)> {
        let (a, b) = raw
            .split_once(',')
            .ok_or_else(|| Error::data(format!("scene file: {key} needs two comma-separated numbers")))?;
        Ok((
            a.trim().parse().map_err(|_| Error::data(format!("scene file: bad {key}")))?,
            b.trim().parse().map_err(|_| Error::data(format!("scene file: bad {key}")))?,
        ))
    };

    let mut structures = Vec::new();
    for i in 0.. {
        let prefix = format!("structure.{i}.");
        if !map.contains_key(format!("{prefix}name").as_str()) {
            break;
        }
        let role = match get(&format!("{prefix}role"))? {
            "target" => StructureRole::Target,
            "distractor" => StructureRole::Distractor,
            "clutter" => StructureRole::Clutter,
            other => return Err(Error::data(format!("scene file: unknown role {other:?}"))),
        };
        let shape_raw = get(&format!("{prefix}shape"))?;
        let shape = if let Some(r) = shape_raw.strip_prefix("blob:") {
            StructureShape::Blob {
                radius_px: r.parse().map_err(|_| Error::data("scene file: bad blob radius".to_string()))?,
            }
        } else if let Some(rc) = shape_raw.strip_prefix("vessel:") {
            let (a, b) = rc
                .split_once(':')
                .ok_or_else(|| Error::data("scene file: vessel needs r_row:r_col".to_string()))?;
            StructureShape::VesselEllipse {
                r_row_px: a.parse().map_err(|_| Error::data("scene file: bad vessel radius".to_string()))?,
                r_col_px: b.parse().map_err(|_| Error::data("scene file: bad vessel radius".to_string()))?,
            }
        } else {
            return Err(Error::data(format!("scene file: unknown shape {shape_raw:?}")));
        };
        let motion = parse_motion(
            get(&format!("{prefix}motion"))?,
            get(&format!("{prefix}drift"))?,
        )?;
        let attached = match get(&format!("{prefix}attached"))? {
            "0" => false,
            "1" => true,
            other => return Err(Error::data(format!("scene file: attached must be 0 or 1, got {other:?}"))),
        };
        structures.push(Structure {
            name: get(&format!("{prefix}name"))?.to_string(),
            role,
            shape,
            base_px: parse_pair(get(&format!("{prefix}base_px"))?, "base_px")?,
            contrast: parse_f64(&format!("{prefix}contrast"))?,
            attached,
            motion,
        });
    }

    let global_motion = parse_motion(get("global_motion")?, get("global_drift")?)?;
    Ok(SceneSpec {
        id: get("id")?.to_string(),
        width: parse_usize("width")?,
        height: parse_usize("height")?,
        spacing_mm_per_px: parse_f64("spacing_mm_per_px")?,
        fps: parse_f64("fps")?,
        frame_count: parse_usize("frame_count")?,
        seed: parse_usize("seed")? as u64,
        speckle_amp: parse_f64("speckle_amp")?,
        noise_level: parse_f64("noise_level")?,
        global_motion,
        structures,
    })
}

fn parse_motion(motion_raw: &str, drift_raw: &str) -> Result<Motion> {
    let nums: Vec<f64> = motion_raw
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::data("scene file: bad motion".to_string()))
        })
        .collect::<Result<_>>()?;
    if nums.len() != 4 {
        return Err(Error::data(
            "scene file: motion needs amp_row,amp_col,period,phase".to_string(),
        ));
    }
    let (dr, dc) = drift_raw
        .split_once(',')
        .ok_or_else(|| Error::data("scene file: drift needs two comma-separated numbers".to_string()))?;
    Ok(Motion {
        amp_mm: (nums[0], nums[1]),
        period_frames: nums[2],
        phase: nums[3],
        drift_mm_per_frame: (
            dr.trim().parse().map_err(|_| Error::data("scene file: bad drift".to_string()))?,
            dc.trim().parse().map_err(|_| Error::data("scene file: bad drift".to_string()))?,
        ),
    })
}

// --- benchmark suite ---

/// How much brighter the adversarial twin is than its target. Appearance
/// stays effectively identical (the profiles are the same shape), but an
/// unregularized tracker consistently prefers the stronger response.
pub const TWIN_CONTRAST_BOOST: f64 = 1.05;

/// One sequence of the benchmark suite.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    /// `train`, `val` or `test`.
    pub split: &'static str,
    pub scene: SceneSpec,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// A single ordinary scene: one tracked blob plus vessel/blob clutter at
/// a safe distance, everything breathing on its own phase.
fn ordinary_scene(id: String, rng: &mut ChaCha8Rng) -> SceneSpec {
    let spacing = 0.27;
    let global_motion = Motion {
        amp_mm: (uniform(rng, 0.3, 0.8), uniform(rng, 1.6, 3.0)),
        period_frames: uniform(rng, 42.0, 58.0),
        phase: uniform(rng, 0.0, std::f64::consts::TAU),
        drift_mm_per_frame: (0.0, 0.0),
    };
    let tracked_base = (uniform(rng, 100.0, 156.0), uniform(rng, 100.0, 156.0));
    let mut structures = vec![Structure {
        name: "landmark".to_string(),
        role: StructureRole::Target,
        shape: StructureShape::Blob {
            radius_px: uniform(rng, 4.5, 7.0),
        },
        base_px: tracked_base,
        contrast: uniform(rng, 0.55, 0.8),
        attached: true,
        motion: Motion::none(),
    }];

    // Clutter positions keep their distance from the tracked landmark so
    // ordinary scenes have no accidental twin inside the search region.
    let place_away = |min_dist: f64, rng: &mut ChaCha8Rng| -> (f64, f64) {
        loop {
            let p = (uniform(rng, 52.0, 204.0), uniform(rng, 52.0, 204.0));
            let d = ((p.0 - tracked_base.0).powi(2) + (p.1 - tracked_base.1).powi(2)).sqrt();
            if d >= min_dist {
                return p;
            }
        }
    };
    let vessel_pos = place_away(64.0, rng);
    structures.push(Structure {
        name: "vessel".to_string(),
        role: StructureRole::Clutter,
        shape: StructureShape::VesselEllipse {
            r_row_px: uniform(rng, 8.0, 13.0),
            r_col_px: uniform(rng, 5.0, 9.0),
        },
        base_px: vessel_pos,
        contrast: uniform(rng, -0.65, -0.35),
        attached: true,
        // Small deviation from the tissue motion (different depth).
        motion: Motion {
            amp_mm: (uniform(rng, 0.05, 0.2), uniform(rng, 0.2, 0.6)),
            period_frames: uniform(rng, 42.0, 58.0),
            phase: uniform(rng, 0.0, std::f64::consts::TAU),
            drift_mm_per_frame: (0.0, 0.0),
        },
    });
    let blob_pos = place_away(72.0, rng);
    structures.push(Structure {
        name: "echo".to_string(),
        role: StructureRole::Clutter,
        shape: StructureShape::Blob {
            radius_px: uniform(rng, 4.0, 8.0),
        },
        base_px: blob_pos,
        contrast: uniform(rng, 0.35, 0.6),
        attached: true,
        motion: Motion {
            amp_mm: (uniform(rng, 0.05, 0.25), uniform(rng, 0.2, 0.7)),
            period_frames: uniform(rng, 42.0, 58.0),
            phase: uniform(rng, 0.0, std::f64::consts::TAU),
            drift_mm_per_frame: (0.0, 0.0),
        },
    });

    SceneSpec {
        id,
        width: 256,
        height: 256,
        spacing_mm_per_px: spacing,
        fps: 15.0,
        frame_count: 200,
        seed: rng.gen(),
        speckle_amp: 0.2,
        noise_level: 0.012,
        global_motion,
        structures,
    }
}

/// Adversarial scene: an identical-appearance, slightly stronger twin
/// sweeps past the tracked landmark (closest approach well inside twice
/// the displacement bound) and retreats to the far corner. A tracker
/// that switches ends up hundreds of pixels off.
pub fn adversarial_twin_spec(seed: u64, variant: usize) -> SceneSpec {
    let spacing = 0.27;
    let radius = 6.0;
    let contrast = 0.85;
    // Target breathes in place; the twin's path is a half-cosine sweep
    // from the far corner to just past the target and back.
    let (target_base, sweep_from, sweep_to, phase) = if variant == 0 {
        ((70.0, 70.0), (220.0, 220.0), (95.0, 70.0), 0.0)
    } else {
        ((70.0, 186.0), (220.0, 36.0), (95.0, 186.0), 1.1)
    };
    let mid = (
        0.5 * (sweep_from.0 + sweep_to.0),
        0.5 * (sweep_from.1 + sweep_to.1),
    );
    let amp_px = (
        -0.5 * (sweep_to.0 - sweep_from.0),
        -0.5 * (sweep_to.1 - sweep_from.1),
    );
    let global_motion = Motion {
        amp_mm: (0.0, 2.16),
        period_frames: 45.0,
        phase,
        drift_mm_per_frame: (0.0, 0.0),
    };
    let structures = vec![
        Structure {
            name: "landmark".to_string(),
            role: StructureRole::Target,
            shape: StructureShape::Blob { radius_px: radius },
            base_px: target_base,
            contrast,
            attached: true,
            motion: Motion::none(),
        },
        // The twin slides through the tissue on its own absolute path
        // (a structure in a different layer).
        Structure {
            name: "twin".to_string(),
            role: StructureRole::Distractor,
            shape: StructureShape::Blob { radius_px: radius },
            base_px: mid,
            contrast: contrast * TWIN_CONTRAST_BOOST,
            attached: false,
            motion: Motion {
                amp_mm: (amp_px.0 * spacing, amp_px.1 * spacing),
                period_frames: 200.0,
                phase: std::f64::consts::FRAC_PI_2,
                drift_mm_per_frame: (0.0, 0.0),
            },
        },
        Structure {
            name: "vessel".to_string(),
            role: StructureRole::Clutter,
            shape: StructureShape::VesselEllipse {
                r_row_px: 10.0,
                r_col_px: 6.0,
            },
            base_px: if variant == 0 { (200.0, 80.0) } else { (200.0, 176.0) },
            contrast: -0.5,
            attached: true,
            motion: Motion::none(),
        },
    ];
    SceneSpec {
        id: format!("twin_{variant}"),
        width: 256,
        height: 256,
        spacing_mm_per_px: spacing,
        fps: 15.0,
        frame_count: 200,
        seed,
        speckle_amp: 0.06,
        noise_level: 0.004,
        global_motion,
        structures,
    }
}

/// The default benchmark suite: 12 training, 4 validation and 6 test
/// sequences (the last two test sequences are the adversarial twins),
/// 200 frames each, 256x256 at 0.27 mm/px.
pub fn default_suite(seed: u64) -> Vec<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for i in 0..12 {
        entries.push(SuiteEntry {
            split: "train",
            scene: ordinary_scene(format!("seq_{i:02}"), &mut rng),
        });
    }
    for i in 0..4 {
        entries.push(SuiteEntry {
            split: "val",
            scene: ordinary_scene(format!("seq_{:02}", 12 + i), &mut rng),
        });
    }
    for i in 0..4 {
        entries.push(SuiteEntry {
            split: "test",
            scene: ordinary_scene(format!("seq_{:02}", 16 + i), &mut rng),
        });
    }
    for variant in 0..2 {
        let mut scene = adversarial_twin_spec(rng.gen(), variant);
        scene.id = format!("seq_{:02}_twin", 20 + variant);
        entries.push(SuiteEntry {
            split: "test",
            scene,
        });
    }
    entries
}

/// Generate and write a whole suite under `out/<split>/<id>/`, emitting
/// frames, ground truth CSVs and the scene spec. Returns the generator
/// warnings.
pub fn write_suite(out: &Path, seed: u64) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    for entry in default_suite(seed) {
        let dir = out.join(entry.split).join(&entry.scene.id);
        warnings.extend(write_scene(&dir, &entry.scene)?);
    }
    Ok(warnings)
}

/// Generate and write a single scene directory.
pub fn write_scene(dir: &Path, scene: &SceneSpec) -> Result<Vec<String>> {
    let generated = generate(scene)?;
    crate::data::save_sequence(dir, &generated.sequence)?;
    for (i, truth) in generated.truths.iter().enumerate() {
        let path = dir.join(format!("gt_landmark_{i:02}.csv"));
        crate::data::save_annotations(&path, &truth.annotations)?;
    }
    let scene_path = dir.join("scene.txt");
    std::fs::write(&scene_path, format_scene(scene)).map_err(|e| Error::io(&scene_path, e))?;
    Ok(generated.warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            id: "t".to_string(),
            width: 96,
            height: 96,
            spacing_mm_per_px: 0.27,
            fps: 15.0,
            frame_count: 12,
            seed,
            speckle_amp: 0.2,
            noise_level: 0.01,
            global_motion: Motion {
                amp_mm: (0.5, 1.5),
                period_frames: 8.0,
                phase: 0.3,
                drift_mm_per_frame: (0.0, 0.0),
            },
            structures: vec![Structure {
                name: "lm".to_string(),
                role: StructureRole::Target,
                shape: StructureShape::Blob { radius_px: 5.0 },
                base_px: (48.0, 40.0),
                contrast: 0.6,
                attached: true,
                motion: Motion::none(),
            }],
        }
    }

    #[test]
    fn zero_amplitude_motion_gives_constant_ground_truth() {
        let mut spec = simple_spec(1);
        spec.global_motion = Motion::none();
        spec.structures[0].motion = Motion::none();
        let out = generate(&spec).unwrap();
        let first = out.truths[0].annotations[0].position;
        for a in &out.truths[0].annotations {
            assert_eq!(a.position, first);
        }
    }

    #[test]
    fn trajectory_matches_analytic_sinusoid_exactly() {
        let spec = simple_spec(2);
        let out = generate(&spec).unwrap();
        let m = &spec.global_motion;
        for (t, a) in out.truths[0].annotations.iter().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * t as f64 / m.period_frames + m.phase;
            let want_col = spec.structures[0].base_px.1 + m.amp_mm.1 / spec.spacing_mm_per_px * angle.sin();
            let want_row = spec.structures[0].base_px.0 + m.amp_mm.0 / spec.spacing_mm_per_px * angle.sin();
            assert_eq!(a.position.x, want_col);
            assert_eq!(a.position.y, want_row);
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate(&simple_spec(7)).unwrap();
        let b = generate(&simple_spec(7)).unwrap();
        for (fa, fb) in a.sequence.frames.iter().zip(&b.sequence.frames) {
            assert_eq!(fa.data, fb.data);
        }
    }

    #[test]
    fn different_seed_changes_the_speckle() {
        let a = generate(&simple_spec(7)).unwrap();
        let b = generate(&simple_spec(8)).unwrap();
        assert_ne!(a.sequence.frames[0].data, b.sequence.frames[0].data);
    }

    #[test]
    fn out_of_bounds_trajectory_names_the_structure() {
        let mut spec = simple_spec(3);
        spec.structures[0].motion = Motion {
            drift_mm_per_frame: (0.0, 3.0),
            ..Motion::none()
        };
        let err = generate(&spec).unwrap_err();
        assert!(err.to_string().contains("lm"), "{err}");
    }

    #[test]
    fn fast_motion_warns_about_displacement_bound() {
        let mut spec = simple_spec(4);
        spec.structures[0].motion = Motion {
            amp_mm: (0.0, 9.0), // ~33 px amplitude
            period_frames: 3.0,
            ..Motion::none()
        };
        spec.structures[0].base_px = (48.0, 48.0);
        let out = generate(&spec).unwrap();
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn mean_intensity_is_stationary_across_frames() {
        let spec = simple_spec(5);
        let out = generate(&spec).unwrap();
        let means: Vec<f64> = out
            .sequence
            .frames
            .iter()
            .map(|f| f.data.iter().map(|&v| v as f64).sum::<f64>() / f.data.len() as f64)
            .collect();
        for pair in means.windows(2) {
            let drift = (pair[1] - pair[0]).abs() / pair[0];
            assert!(drift < 0.01, "mean drifted {drift}");
        }
    }

    #[test]
    fn scene_spec_round_trips_through_text() {
        let spec = simple_spec(11);
        let text = format_scene(&spec);
        let parsed = parse_scene(&text).unwrap();
        assert_eq!(parsed, spec);
    }

    fn twin_positions(spec: &SceneSpec) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
        let target = spec.structures.iter().position(|s| s.role == StructureRole::Target).unwrap();
        let twin = spec
            .structures
            .iter()
            .position(|s| s.role == StructureRole::Distractor)
            .unwrap();
        let t: Vec<_> = (0..spec.frame_count).map(|i| spec.position_of(target, i)).collect();
        let d: Vec<_> = (0..spec.frame_count).map(|i| spec.position_of(twin, i)).collect();
        (t, d)
    }

    #[test]
    fn twin_scene_closest_approach_is_within_twice_the_displacement_bound() {
        for variant in 0..2 {
            let spec = adversarial_twin_spec(31, variant);
            let (t, d) = twin_positions(&spec);
            let min_dist = t
                .iter()
                .zip(&d)
                .map(|(a, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
;
            // 2 * d_max at 0.27 mm/px is 64 px.
            assert!(min_dist < 64.0, "variant {variant}: min distance {min_dist}");
            assert!(min_dist > 8.0, "variant {variant}: twins should not merge ({min_dist})");
        }
    }

    #[test]
    fn twin_scene_ends_far_from_the_target() {
        // A tracker that switches at closest approach and follows the
        // twin ends up past the switch-failure threshold (160 px).
        for variant in 0..2 {
            let spec = adversarial_twin_spec(32, variant);
            let (t, d) = twin_positions(&spec);
            let last = t.len() - 1;
            let end_dist = ((t[last].0 - d[last].0).powi(2) + (t[last].1 - d[last].1).powi(2)).sqrt();
            assert!(end_dist > 160.0, "variant {variant}: end distance {end_dist}");
        }
    }

    #[test]
    fn twin_patches_at_closest_approach_are_near_identical() {
        let spec = adversarial_twin_spec(33, 0);
        let (t, d) = twin_positions(&spec);
        let (closest_frame, _) = t
            .iter()
            .zip(&d)
            .map(|(a, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let out = generate(&spec).unwrap();
        let frame = &out.sequence.frames[closest_frame];
        let patch_at = |center: (f64, f64)| -> Vec<f64> {
            let (cr, cc) = (center.0.round() as i64, center.1.round() as i64);
            let mut vals = Vec::new();
            for r in -7i64..=7 {
                for c in -7i64..=7 {
                    vals.push(frame.at((cr + r) as usize, (cc + c) as usize) as f64);
                }
            }
            vals
        };
        let a = patch_at(t[closest_frame]);
        let b = patch_at(d[closest_frame]);
        let ncc = {
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (ma, mb) = (mean(&a), mean(&b));
            let mut num = 0.0;
            let mut da = 0.0;
            let mut db = 0.0;
            for (x, y) in a.iter().zip(&b) {
                num += (x - ma) * (y - mb);
                da += (x - ma).powi(2);
                db += (y - mb).powi(2);
            }
            num / (da.sqrt() * db.sqrt())
        };
        assert!(ncc > 0.95, "normalized cross-correlation {ncc}");
    }

    #[test]
    fn suite_has_the_documented_split() {
        let suite = default_suite(5);
        let count = |split: &str| suite.iter().filter(|e| e.split == split).count();
        assert_eq!(count("train"), 12);
        assert_eq!(count("val"), 4);
        assert_eq!(count("test"), 6);
        let twins = suite.iter().filter(|e| e.scene.id.contains("twin")).count();
        assert_eq!(twins, 2);
        // Deterministic under a fixed seed.
        let again = default_suite(5);
        for (a, b) in suite.iter().zip(&again) {
            assert_eq!(a.scene, b.scene);
        }
    }
}
