//! Frame-by-frame landmark localization with a temporal location prior.
//!
//! Per frame: embed the fixed search window, cross-correlate against the
//! frame-0 template embedding, bilinearly upsample the similarity map by
//! the network stride (so the prior, the displacement bound and the
//! argmax all work in true search-patch pixels), damp scores outside the
//! historical location prior, take the constrained argmax, and fold the
//! prediction back into the prior as a running average.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::config::Constants;
use crate::data::{crop_search, crop_template, Point, Sequence};
use crate::error::{Error, Result};
use crate::grid::Grid2;
use crate::nn::network::Network;
use crate::similarity::gaussian::gaussian_map;
use crate::similarity::{cross_correlate_batch, embed, MapGeometry, SimilarityMap, XcorrPath};

/// Ramp weight of the location prior at frame count `t`:
/// `k * tanh(t / tau)`. Zero at `t = 0`, increasing toward `k`.
pub fn time_weight(t: u64, k: f64, tau: f64) -> f64 {
    k * (t as f64 / tau).tanh()
}

/// Similarity values on the stride-upsampled grid, anchored in
/// search-patch pixels: position of cell `(r, c)` is `origin + (r, c)`.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    pub values: Grid2<f64>,
    pub origin: (f64, f64),
}

impl PatchGrid {
    pub fn position(&self, r: usize, c: usize) -> (f64, f64) {
        (self.origin.0 + r as f64, self.origin.1 + c as f64)
    }
}

/// Bilinearly upsample a similarity map by its stride onto the
/// search-patch pixel grid.
pub fn upsample_to_patch_grid(map: &SimilarityMap) -> PatchGrid {
    let stride = map.geometry.stride;
    let (mh, mw) = (map.values.rows(), map.values.cols());
    let (oh, ow) = ((mh - 1) * stride + 1, (mw - 1) * stride + 1);
    let mut values = Grid2::new(oh, ow);
    let inv = 1.0 / stride as f64;
    for r in 0..oh {
        let mr = r as f64 * inv;
        for c in 0..ow {
            values.set(r, c, map.values.bilinear(mr, c as f64 * inv));
        }
    }
    PatchGrid {
        values,
        origin: map.geometry.offset,
    }
}

/// Multiply the similarity values by `1 - w * (1 - prior)`.
///
/// The multiplier stays in `[1 - w, 1]`, so signs are preserved, no
/// magnitude ever grows, and cells where the prior peaks are untouched.
pub fn regularize(values: &Grid2<f64>, prior: &Grid2<f64>, w: f64) -> Result<Grid2<f64>> {
    if values.rows() != prior.rows() || values.cols() != prior.cols() {
        return Err(Error::config(format!(
            "regularizer grid mismatch: similarity {}x{} vs prior {}x{}",
            values.rows(),
            values.cols(),
            prior.rows(),
            prior.cols()
        )));
    }
    let mut out = values.clone();
    for (v, &g) in out.data_mut().iter_mut().zip(prior.data()) {
        *v *= 1.0 - w * (1.0 - g);
    }
    Ok(out)
}

/// Argmax over grid cells within the open disk of radius `d_max` around
/// `prev` (positions in search-patch pixels). Ties break toward the
/// smallest distance to `prev`, then row-major order. `None` when no
/// cell is feasible.
pub fn constrained_argmax(
    grid: &PatchGrid,
    prev: (f64, f64),
    d_max: f64,
) -> Option<((usize, usize), f64)> {
    let d2_max = d_max * d_max;
    let mut best: Option<(f64, f64, (usize, usize))> = None; // value, dist2, cell
    for r in 0..grid.values.rows() {
        let pr = grid.origin.0 + r as f64;
        let dr2 = (pr - prev.0) * (pr - prev.0);
        if dr2 >= d2_max {
            continue;
        }
        for c in 0..grid.values.cols() {
            let pc = grid.origin.1 + c as f64;
            let d2 = dr2 + (pc - prev.1) * (pc - prev.1);
            if d2 >= d2_max {
                continue;
            }
            let v = grid.values.at(r, c);
            let better = match &best {
                None => true,
                Some((bv, bd2, _)) => v > *bv || (v == *bv && d2 < *bd2),
            };
            if better {
                best = Some((v, d2, (r, c)));
            }
        }
    }
    best.map(|(v, _, cell)| (cell, v))
}

/// The tracker's temporal state: the location prior (running average of
/// Gaussians centered at past predictions), the count of prior updates,
/// and the previous landmark position.
#[derive(Debug, Clone)]
pub struct TrackerState {
    prior: Grid2<f64>,
    origin: (f64, f64),
    updates: u64,
    prev: (f64, f64),
    sigma_prior_px: f64,
}

impl TrackerState {
    pub fn new(rows: usize, cols: usize, origin: (f64, f64), start: (f64, f64), sigma_prior_px: f64) -> TrackerState {
        TrackerState {
            prior: Grid2::new(rows, cols),
            origin,
            updates: 0,
            prev: start,
            sigma_prior_px,
        }
    }

    pub fn prior(&self) -> &Grid2<f64> {
        &self.prior
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn prev(&self) -> (f64, f64) {
        self.prev
    }

    /// Fold a new prediction into the running average:
    /// `prior += (G - prior) / t` with the post-increment count `t`, so
    /// the first update installs the Gaussian exactly.
    pub fn update_prior(&mut self, position: (f64, f64)) -> Result<()> {
        let center = (position.0 - self.origin.0, position.1 - self.origin.1);
        let g = gaussian_map(self.prior.rows(), self.prior.cols(), center, self.sigma_prior_px)?;
        self.updates += 1;
        let t = self.updates as f64;
        for (p, &gv) in self.prior.data_mut().iter_mut().zip(g.values().data()) {
            *p += (gv - *p) / t;
        }
        self.prev = position;
        Ok(())
    }
}

/// Options of a tracking run.
#[derive(Debug, Clone)]
pub struct TrackOptions {
    pub constants: Constants,
    /// Apply the temporal prior (Eqs. of the location model). Off for
    /// the ablation run.
    pub regularizer: bool,
    pub xcorr: XcorrPath,
}

impl Default for TrackOptions {
    fn default() -> Self {
        TrackOptions {
            constants: Constants::default(),
            regularizer: true,
            xcorr: XcorrPath::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEntry {
    pub frame: usize,
    /// Predicted landmark in image pixels.
    pub position: Point,
    pub score: f64,
    pub latency_ms: f64,
    pub lost: bool,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub spacing_mm_per_px: f64,
    pub entries: Vec<TrajectoryEntry>,
}

/// Track one landmark through a sequence.
///
/// The template is cropped once around `initial` in frame 0; every
/// subsequent frame is searched in a fixed window centered at that same
/// initial annotation. Returns one entry per frame (frame 0 carries the
/// annotation itself).
pub fn track_sequence(
    net: &Network<f32>,
    seq: &Sequence,
    initial: Point,
    opts: &TrackOptions,
) -> Result<Trajectory> {
    seq.validate().map_err(|e| Error::usage(e.to_string()))?;
    if seq.frames.len() < 2 {
        return Err(Error::usage(format!(
            "sequence {} has {} frame(s); tracking needs at least 2",
            seq.id,
            seq.frames.len()
        )));
    }
    let c = &opts.constants;
    if (seq.spacing_mm_per_px - c.spacing_mm_per_px).abs() > 1e-12 {
        return Err(Error::config(format!(
            "sequence spacing {} mm/px differs from the working spacing {} mm/px; resample first",
            seq.spacing_mm_per_px, c.spacing_mm_per_px
        )));
    }

    let template = crop_template(&seq.frames[0], initial, c.template_size)?;
    let template_emb = embed(net, &template.to_tensor())?;
    let geometry = MapGeometry::for_network(net, (c.template_size, c.template_size))?;

    // The search window is identical for every frame; crop once to learn
    // its offset and reuse it for coordinate mapping.
    let probe = crop_search(&seq.frames[1], initial, c.search_size)?;
    let start = probe.image_to_patch(initial.row_col());

    let semb_extent = net.output_extent(c.search_size)?;
    let temb_extent = net.output_extent(c.template_size)?;
    let map_extent = semb_extent - temb_extent + 1;
    let grid_extent = (map_extent - 1) * geometry.stride + 1;
    let mut state = TrackerState::new(
        grid_extent,
        grid_extent,
        geometry.offset,
        start,
        c.sigma_prior_px(),
    );

    let mut entries = Vec::with_capacity(seq.frames.len());
    entries.push(TrajectoryEntry {
        frame: 0,
        position: initial,
        score: 0.0,
        latency_ms: 0.0,
        lost: false,
    });

    for (frame_idx, frame) in seq.frames.iter().enumerate().skip(1) {
        let t0 = Instant::now();
        let search = crop_search(frame, initial, c.search_size)?;
        let search_emb = embed(net, &search.to_tensor())?;
        let map_tensor = cross_correlate_batch(&template_emb, &search_emb, opts.xcorr)?;
        let map = SimilarityMap::from_tensor(&map_tensor, geometry)?;
        let grid = upsample_to_patch_grid(&map);

        let scored = if opts.regularizer {
            let w = time_weight(state.updates(), c.k, c.tau);
            PatchGrid {
                values: regularize(&grid.values, state.prior(), w)?,
                origin: grid.origin,
            }
        } else {
            grid
        };

        let (position, score, lost) = match constrained_argmax(&scored, state.prev(), c.d_max_px()) {
            Some((cell, value)) => (scored.position(cell.0, cell.1), value, false),
            None => (state.prev(), f64::NAN, true),
        };
        if opts.regularizer {
            state.update_prior(position)?;
        } else {
            state.prev = position;
        }

        let image_rc = search.patch_to_image(position);
        entries.push(TrajectoryEntry {
            frame: frame_idx,
            position: Point::from_row_col(image_rc),
            score,
            latency_ms: t0.elapsed().as_secs_f64() * 1000.0,
            lost,
        });
    }

    Ok(Trajectory {
        spacing_mm_per_px: c.spacing_mm_per_px,
        entries,
    })
}

// --- trajectory CSV ---

pub const TRAJECTORY_HEADER: &str = "frame,x_px,y_px,x_mm,y_mm,score,latency_ms,lost_flag";

/// Write a trajectory CSV. Measured latencies vary run to run, so they
/// are written as 0 unless `include_latency` is set; everything else is
/// deterministic for identical inputs.
pub fn write_trajectory(path: &Path, traj: &Trajectory, include_latency: bool) -> Result<()> {
    let mut out = String::new();
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    let s = traj.spacing_mm_per_px;
    for e in &traj.entries {
        let latency = if include_latency { e.latency_ms } else { 0.0 };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.frame,
            e.position.x,
            e.position.y,
            e.position.x * s,
            e.position.y * s,
            e.score,
            latency,
            u8::from(e.lost)
        ));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        Some((_, h)) => {
            return Err(Error::data(format!(
                "{}: expected header {TRAJECTORY_HEADER:?}, got {h:?}",
                path.display()
            )))
        }
        None => return Err(Error::data(format!("{}: empty trajectory", path.display()))),
    }
    let mut entries = Vec::new();
    let mut spacing = None;
    for (lineno, line) in lines {
        let row = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::data(format!(
                "{}: row {row}: expected 8 fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        let num = |i: usize, what: &str| -> Result<f64> {
            fields[i].trim().parse().map_err(|_| {
                Error::data(format!("{}: row {row}: bad {what} {:?}", path.display(), fields[i]))
            })
        };
        let frame = fields[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::data(format!("{}: row {row}: bad frame index", path.display())))?;
        let x = num(1, "x_px")?;
        let y = num(2, "y_px")?;
        let x_mm = num(3, "x_mm")?;
        if x.abs() > 1e-9 && spacing.is_none() {
            spacing = Some(x_mm / x);
        }
        entries.push(TrajectoryEntry {
            frame,
            position: Point::new(x, y),
            score: num(5, "score")?,
            latency_ms: num(6, "latency_ms")?,
            lost: fields[7].trim() != "0",
        });
    }
    Ok(Trajectory {
        spacing_mm_per_px: spacing.unwrap_or(Constants::default().spacing_mm_per_px),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::LayerSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn time_weight_ramp_properties() {
        let (k, tau) = (0.5, 50.0);
        assert_eq!(time_weight(0, k, tau), 0.0);
        let mut prev = -1.0;
        for t in 0..400 {
            let w = time_weight(t, k, tau);
            assert!(w >= prev);
            assert!(w < k);
            prev = w;
        }
        // Approaches k for large t.
        assert!(k - time_weight(2000, k, tau) < 1e-9);
        // At t = tau the ramp reads k * tanh(1).
        let w50 = time_weight(50, k, tau);
        assert!((w50 - 0.5 * 1.0f64.tanh()).abs() < 1e-12);
        assert!((w50 - 0.38079).abs() < 1e-5);
    }

    #[test]
    fn regularize_identity_at_zero_weight() {
        let s = Grid2::from_vec(2, 2, vec![0.5, -0.25, 1.0, 2.0]).unwrap();
        let prior = Grid2::from_vec(2, 2, vec![0.0, 0.5, 0.9, 1.0]).unwrap();
        let out = regularize(&s, &prior, 0.0).unwrap();
        assert_eq!(out.data(), s.data());
    }

    #[test]
    fn regularize_never_penalizes_the_prior_peak() {
        let s = Grid2::from_vec(1, 2, vec![0.8, 0.8]).unwrap();
        let prior = Grid2::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let out = regularize(&s, &prior, 0.5).unwrap();
        assert_eq!(out.at(0, 0), 0.8);
        assert!((out.at(0, 1) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn regularize_uniform_example() {
        let s = Grid2::from_vec(3, 3, vec![1.0; 9]).unwrap();
        let prior = Grid2::new(3, 3);
        let out = regularize(&s, &prior, 0.5).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn regularize_preserves_sign_and_magnitude_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..50 {
            let s_data: Vec<f64> = (0..25).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g_data: Vec<f64> = (0..25).map(|_| rng.gen_range(0.0..1.0)).collect();
            let w = rng.gen_range(0.0..0.5);
            let s = Grid2::from_vec(5, 5, s_data).unwrap();
            let prior = Grid2::from_vec(5, 5, g_data).unwrap();
            let out = regularize(&s, &prior, w).unwrap();
            for (o, v) in out.data().iter().zip(s.data()) {
                assert!(o.abs() <= v.abs() + 1e-15);
                assert!(o.signum() == v.signum() || *o == 0.0);
            }
        }
    }

    fn grid_from(values: Vec<f64>, rows: usize, cols: usize, origin: (f64, f64)) -> PatchGrid {
        PatchGrid {
            values: Grid2::from_vec(rows, cols, values).unwrap(),
            origin,
        }
    }

    #[test]
    fn global_max_inside_disk_matches_unconstrained_argmax() {
        let mut values = vec![0.0; 81];
        values[4 * 9 + 5] = 3.0;
        let grid = grid_from(values, 9, 9, (0.0, 0.0));
        let ((r, c), v) = constrained_argmax(&grid, (4.0, 4.0), 5.0).unwrap();
        assert_eq!((r, c), (4, 5));
        assert_eq!(v, 3.0);
    }

    #[test]
    fn equal_maxima_inside_beats_outside() {
        let mut values = vec![0.0; 121];
        values[5 * 11 + 6] = 2.0; // distance 1 from prev
        values[5 * 11 + 10] = 2.0; // distance 5 from prev: outside
        let grid = grid_from(values, 11, 11, (0.0, 0.0));
        let ((r, c), _) = constrained_argmax(&grid, (5.0, 5.0), 3.0).unwrap();
        assert_eq!((r, c), (5, 6));
    }

    #[test]
    fn empty_feasible_set_returns_none() {
        let grid = grid_from(vec![1.0; 9], 3, 3, (100.0, 100.0));
        assert!(constrained_argmax(&grid, (0.0, 0.0), 5.0).is_none());
    }

    #[test]
    fn constrained_argmax_matches_exhaustive_oracle_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let values: Vec<f64> = (0..441).map(|_| (rng.gen_range(-8i32..8) as f64) * 0.25).collect();
            let prev = (rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0));
            let d_max = rng.gen_range(1.0..12.0);
            let grid = grid_from(values.clone(), 21, 21, (0.0, 0.0));
            let got = constrained_argmax(&grid, prev, d_max);

            // Exhaustive scan with the same tie rules, written separately.
            let mut want: Option<((usize, usize), f64, f64)> = None;
            for r in 0..21 {
                for c in 0..21 {
                    let d2 = (r as f64 - prev.0).powi(2) + (c as f64 - prev.1).powi(2);
                    if d2 >= d_max * d_max {
                        continue;
                    }
                    let v = values[r * 21 + c];
                    let replace = match &want {
                        None => true,
                        Some((_, bv, bd2)) => v > *bv || (v == *bv && d2 < *bd2),
                    };
                    if replace {
                        want = Some(((r, c), v, d2));
                    }
                }
            }
            match (got, want) {
                (None, None) => {}
                (Some((cell, v)), Some((wcell, wv, _))) => {
                    assert_eq!(cell, wcell);
                    assert_eq!(v, wv);
                }
                other => panic!("mismatch: {other:?}"),
            }
        }
    }

    #[test]
    fn first_prior_update_installs_the_gaussian_exactly() {
        let mut state = TrackerState::new(21, 21, (0.0, 0.0), (10.0, 10.0), 4.0);
        state.update_prior((10.0, 10.0)).unwrap();
        let g = gaussian_map(21, 21, (10.0, 10.0), 4.0).unwrap();
        assert_eq!(state.prior().data(), g.values().data());
        assert_eq!(state.updates(), 1);
    }

    #[test]
    fn repeated_updates_with_same_position_are_a_fixed_point() {
        let mut state = TrackerState::new(15, 15, (0.0, 0.0), (7.0, 7.0), 3.0);
        state.update_prior((7.0, 7.0)).unwrap();
        let snapshot = state.prior().clone();
        for _ in 0..5 {
            state.update_prior((7.0, 7.0)).unwrap();
        }
        assert_eq!(state.prior().data(), snapshot.data());
    }

    #[test]
    fn prior_equals_arithmetic_mean_of_contributed_gaussians() {
        let centers = [(5.0, 5.0), (9.0, 12.0), (14.0, 7.0)];
        let mut state = TrackerState::new(19, 19, (0.0, 0.0), centers[0], 5.0);
        for &c in &centers {
            state.update_prior(c).unwrap();
        }
        for idx in 0..19 * 19 {
            let (r, c) = (idx / 19, idx % 19);
            let mean: f64 = centers
                .iter()
                .map(|&ct| gaussian_map(19, 19, ct, 5.0).unwrap().values().at(r, c))
                .sum::<f64>()
                / 3.0;
            assert!((state.prior().at(r, c) - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn prior_values_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = TrackerState::new(25, 25, (0.0, 0.0), (12.0, 12.0), 6.0);
        for _ in 0..40 {
            let p = (rng.gen_range(0.0..24.0), rng.gen_range(0.0..24.0));
            state.update_prior(p).unwrap();
            assert!(state.prior().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    /// A single zero-sum 3x3 conv (high-pass) makes the embedding a
    /// DC-free version of the patch, so raw correlation peaks at the
    /// true match and tracker behavior can be checked without a trained
    /// network.
    fn identity_net() -> Network<f32> {
        let mut net = Network::<f32>::new(vec![LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 1,
        }])
        .unwrap();
        for p in net.param_slices_mut() {
            if p.len() == 9 {
                p.copy_from_slice(&[-0.125; 9]);
                p[4] = 1.0;
            }
        }
        net
    }

    fn static_sequence(frames: usize, side: usize) -> Sequence {
        use crate::synth::{generate, Motion, SceneSpec, Structure, StructureRole, StructureShape};
        let spec = SceneSpec {
            id: "static".to_string(),
            width: side,
            height: side,
            spacing_mm_per_px: 0.27,
            fps: 15.0,
            frame_count: frames,
            seed: 5,
            speckle_amp: 0.25,
            noise_level: 0.005,
            global_motion: Motion::none(),
            structures: vec![Structure {
                name: "lm".to_string(),
                role: StructureRole::Target,
                shape: StructureShape::Blob { radius_px: 5.0 },
                base_px: (side as f64 / 2.0, side as f64 / 2.0),
                contrast: 0.7,
                attached: true,
                motion: Motion::none(),
            }],
        };
        generate(&spec).unwrap().sequence
    }

    fn small_track_options() -> TrackOptions {
        TrackOptions {
            constants: Constants {
                template_size: 31,
                search_size: 95,
                ..Constants::default()
            },
            regularizer: true,
            xcorr: XcorrPath::Direct,
        }
    }

    #[test]
    fn static_scene_stays_within_one_pixel() {
        let net = identity_net();
        let seq = static_sequence(12, 128);
        let initial = Point::new(64.0, 64.0);
        let traj = track_sequence(&net, &seq, initial, &small_track_options()).unwrap();
        assert_eq!(traj.entries.len(), 12);
        for e in &traj.entries {
            assert!(!e.lost);
            assert!(e.position.distance(&initial) <= 1.0, "frame {}: drifted to {:?}", e.frame, e.position);
        }
    }

    #[test]
    fn every_step_respects_the_displacement_bound() {
        let net = identity_net();
        let seq = static_sequence(10, 128);
        let opts = small_track_options();
        let traj = track_sequence(&net, &seq, Point::new(63.5, 64.5), &opts).unwrap();
        let d_max = opts.constants.d_max_px();
        for pair in traj.entries.windows(2) {
            assert!(pair[1].position.distance(&pair[0].position) < d_max);
        }
    }

    #[test]
    fn tracking_is_deterministic_and_csv_round_trips() {
        let net = identity_net();
        let seq = static_sequence(6, 128);
        let opts = small_track_options();
        let a = track_sequence(&net, &seq, Point::new(64.0, 64.0), &opts).unwrap();
        let b = track_sequence(&net, &seq, Point::new(64.0, 64.0), &opts).unwrap();
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.score, y.score);
        }
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_trajectory(&p1, &a, false).unwrap();
        write_trajectory(&p2, &b, false).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let back = read_trajectory(&p1).unwrap();
        assert_eq!(back.entries.len(), a.entries.len());
        for (x, y) in back.entries.iter().zip(&a.entries) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.frame, y.frame);
            assert_eq!(x.lost, y.lost);
        }
    }

    #[test]
    fn single_frame_sequence_is_a_usage_error() {
        let net = identity_net();
        let mut seq = static_sequence(3, 128);
        seq.frames.truncate(1);
        let err = track_sequence(&net, &seq, Point::new(64.0, 64.0), &small_track_options()).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn argmax_without_prior_matches_regularized_at_first_frame() {
        // Before any prior update w = 0, so both modes pick the same
        // first landmark.
        let net = identity_net();
        let seq = static_sequence(2, 128);
        let mut opts = small_track_options();
        let with = track_sequence(&net, &seq, Point::new(64.0, 64.0), &opts).unwrap();
        opts.regularizer = false;
        let without = track_sequence(&net, &seq, Point::new(64.0, 64.0), &opts).unwrap();
        assert_eq!(with.entries[1].position, without.entries[1].position);
    }
}
