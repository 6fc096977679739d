//! Training-pair sampling and the optimization loop.
//!
//! Pairs are drawn uniformly within each (sequence, landmark): the
//! template is cropped around the annotation of one frame, the search
//! patch around the landmark's *initial* annotation in a different
//! frame, exactly as at tracking time. One epoch is one pass over a
//! fresh per-epoch draw of `pairs_per_epoch` pairs.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{crop, Annotation, Patch, SequenceWithTruth};
use crate::error::{Error, Result};
use crate::nn::checkpoint::save_checkpoint;
use crate::nn::network::{default_profile, LayerSpec, Network};
use crate::nn::optim::{adam_step, AdamParams, AdamState};
use crate::nn::tensor::Tensor;
use crate::similarity::gaussian::gaussian_map;
use crate::similarity::loss::{binary_target, l2_loss, logistic_loss, LogisticWeighting};
use crate::similarity::xcorr::{xcorr_backward, xcorr_direct};
use crate::similarity::MapGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    L2,
    /// Binary-target logistic baseline, kept for the ablation that shows
    /// it failing to converge here.
    Logistic,
}

/// Which grid `sigma_loss_mm` is measured on. `Image` converts through
/// the map stride (default); `Map` reads the millimetre value directly
/// in map pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaLossGrid {
    #[default]
    Image,
    Map,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub profile: Vec<LayerSpec>,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub sigma_loss_mm: f64,
    pub sigma_loss_grid: SigmaLossGrid,
    pub spacing_mm_per_px: f64,
    pub seed: u64,
    /// Also write `epoch_NNN.ckpt` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub loss: LossKind,
    pub pairs_per_epoch: usize,
    pub val_pairs: usize,
    pub template_size: usize,
    /// Search crop extent used for training pairs. Smaller than the
    /// tracking search window: the synthetic landmarks never stray far
    /// from their initial annotation, and training cost scales with it.
    pub search_size: usize,
    pub logistic_radius_px: f64,
    pub logistic_weighting: LogisticWeighting,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            profile: default_profile(),
            batch_size: 16,
            lr: 1e-4,
            epochs: 100,
            sigma_loss_mm: 2.16,
            sigma_loss_grid: SigmaLossGrid::Image,
            spacing_mm_per_px: 0.27,
            seed: 42,
            checkpoint_every: 0,
            loss: LossKind::L2,
            pairs_per_epoch: 512,
            val_pairs: 64,
            template_size: 127,
            search_size: 159,
            logistic_radius_px: 2.0,
            logistic_weighting: LogisticWeighting::ClassBalanced,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1".to_string()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs must be >= 1".to_string()));
        }
        if self.pairs_per_epoch < 1 || self.val_pairs < 1 {
            return Err(Error::config("pairs_per_epoch and val_pairs must be >= 1".to_string()));
        }
        Ok(())
    }

    /// Sigma of the Gaussian regression target in map pixels.
    pub fn sigma_loss_map_px(&self, stride: usize) -> f64 {
        let image_px = self.sigma_loss_mm / self.spacing_mm_per_px;
        match self.sigma_loss_grid {
            SigmaLossGrid::Image => image_px / stride as f64,
            SigmaLossGrid::Map => image_px,
        }
    }

    fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// One landmark usable for pairing: its sequence index and annotations.
#[derive(Debug, Clone)]
struct TrackRef {
    sequence: usize,
    annotations: Vec<Annotation>,
}

/// A drawn training pair (annotation indices into one track).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDraw {
    track: usize,
    template_idx: usize,
    search_idx: usize,
}

/// Uniform sampler over ordered (template frame, search frame) pairs
/// within each landmark; never pairs a frame with itself.
pub struct PairSampler {
    tracks: Vec<TrackRef>,
    rng: ChaCha8Rng,
    /// Landmarks skipped for having fewer than two annotated frames.
    pub skipped: Vec<String>,
}

impl PairSampler {
    pub fn new(data: &[SequenceWithTruth], seed: u64) -> Result<PairSampler> {
        let mut tracks = Vec::new();
        let mut skipped = Vec::new();
        for (si, s) in data.iter().enumerate() {
            for (name, annotations) in &s.truths {
                if annotations.len() < 2 {
                    skipped.push(format!("{}/{name}", s.sequence.id));
                    continue;
                }
                tracks.push(TrackRef {
                    sequence: si,
                    annotations: annotations.clone(),
                });
            }
        }
        if tracks.is_empty() {
            return Err(Error::data(
                "no landmark has at least two annotated frames; nothing to pair".to_string(),
            ));
        }
        Ok(PairSampler {
            tracks,
            rng: ChaCha8Rng::seed_from_u64(seed),
            skipped,
        })
    }

    pub fn draw(&mut self) -> PairDraw {
        let track = self.rng.gen_range(0..self.tracks.len());
        let n = self.tracks[track].annotations.len();
        let template_idx = self.rng.gen_range(0..n);
        let mut search_idx = self.rng.gen_range(0..n - 1);
        if search_idx >= template_idx {
            search_idx += 1;
        }
        PairDraw {
            track,
            template_idx,
            search_idx,
        }
    }
}

/// A materialized training sample.
pub struct TrainSample {
    pub template: Patch,
    pub search: Patch,
    /// Ground-truth landmark of the search frame in map coordinates.
    pub target_map: (f64, f64),
}

/// Geometry shared by every sample of a training run.
pub struct TrainGeometry {
    pub geometry: MapGeometry,
    pub map_extent: usize,
    pub sigma_map_px: f64,
}

impl TrainGeometry {
    pub fn for_config(net: &Network<f32>, config: &TrainConfig) -> Result<TrainGeometry> {
        let geometry = MapGeometry::for_network(net, (config.template_size, config.template_size))?;
        let semb = net.output_extent(config.search_size)?;
        let temb = net.output_extent(config.template_size)?;
        if temb > semb {
            return Err(Error::config(format!(
                "template embedding ({temb}) exceeds search embedding ({semb}); search_size too small"
            )));
        }
        Ok(TrainGeometry {
            geometry,
            map_extent: semb - temb + 1,
            sigma_map_px: config.sigma_loss_map_px(net.total_stride()).max(1e-6),
        })
    }
}

/// Materialize patches for a draw. `None` when the ground truth falls
/// outside the similarity map (the pair is skipped and counted).
pub fn materialize(
    data: &[SequenceWithTruth],
    sampler: &PairSampler,
    draw: PairDraw,
    config: &TrainConfig,
    geo: &TrainGeometry,
) -> Result<Option<TrainSample>> {
    let track = &sampler.tracks[draw.track];
    let seq = &data[track.sequence].sequence;
    let template_ann = track.annotations[draw.template_idx];
    let search_ann = track.annotations[draw.search_idx];
    let initial = track.annotations[0].position;

    let search = crop(&seq.frames[search_ann.frame], initial, config.search_size)?;
    let patch_rc = search.image_to_patch(search_ann.position.row_col());
    let map_rc = geo.geometry.patch_to_map(patch_rc);
    let hi = (geo.map_extent - 1) as f64;
    if !(map_rc.0 >= 0.0 && map_rc.0 <= hi && map_rc.1 >= 0.0 && map_rc.1 <= hi) {
        return Ok(None);
    }
    let template = crop(&seq.frames[template_ann.frame], template_ann.position, config.template_size)?;
    Ok(Some(TrainSample {
        template,
        search,
        target_map: map_rc,
    }))
}

fn stack_patches(patches: &[&Patch]) -> Tensor<f32> {
    let (h, w) = (patches[0].data.rows(), patches[0].data.cols());
    let mut data = Vec::with_capacity(patches.len() * h * w);
    for p in patches {
        data.extend_from_slice(p.data.data());
    }
    Tensor::from_vec(&[patches.len(), 1, h, w], data).expect("uniform patch sizes")
}

/// Loss and map-gradient of a batch of similarity maps (mean over the
/// batch).
fn batch_loss(
    maps: &Tensor<f32>,
    samples: &[TrainSample],
    config: &TrainConfig,
    geo: &TrainGeometry,
) -> Result<(f64, Tensor<f32>)> {
    let (n, _, mh, mw) = maps.dims4()?;
    debug_assert_eq!(n, samples.len());
    let scale = 1.0 / n as f32;
    let mut grad = Tensor::zeros(maps.shape());
    let mut total = 0.0f64;
    for (i, sample) in samples.iter().enumerate() {
        let map_i = Tensor::from_vec(&[1, 1, mh, mw], maps.sample(i).to_vec())?;
        let (loss_i, grad_i) = match config.loss {
            LossKind::L2 => {
                let target = gaussian_map(mh, mw, sample.target_map, geo.sigma_map_px)?.to_tensor::<f32>();
                l2_loss(&map_i, &target)?
            }
            LossKind::Logistic => {
                let target = binary_target(mh, mw, sample.target_map, config.logistic_radius_px)?;
                logistic_loss(&map_i, &target, config.logistic_weighting)?
            }
        };
        total += loss_i as f64;
        for (g, &gi) in grad
            .sample_mut(i)
            .iter_mut()
            .zip(grad_i.data())
        {
            *g = gi * scale;
        }
    }
    Ok((total / n as f64, grad))
}

/// One optimization step over a materialized batch. Returns the batch
/// loss.
pub fn train_step(
    net: &mut Network<f32>,
    adam: &mut AdamState<f32>,
    samples: &[TrainSample],
    config: &TrainConfig,
    geo: &TrainGeometry,
) -> Result<f64> {
    let templates = stack_patches(&samples.iter().map(|s| &s.template).collect::<Vec<_>>());
    let searches = stack_patches(&samples.iter().map(|s| &s.search).collect::<Vec<_>>());

    let (temb, tape_t) = net.forward_train(&templates)?;
    let (semb, tape_s) = net.forward_train(&searches)?;
    let maps = xcorr_direct(&temb, &semb)?;
    let (loss, grad_map) = batch_loss(&maps, samples, config, geo)?;
    if !loss.is_finite() {
        return Err(Error::numerical(format!("non-finite loss {loss}")));
    }
    let (grad_temb, grad_semb) = xcorr_backward(&temb, &semb, &grad_map)?;
    let (_, grads_search) = net.backward(&tape_s, &grad_semb)?;
    let (_, grads_template) = net.backward(&tape_t, &grad_temb)?;
    let mut grads = grads_search;
    grads.add_assign(&grads_template);

    let g = grads.slices();
    let mut params = net.param_slices_mut();
    adam_step(&mut params, &g, adam, &config.adam())?;
    Ok(loss)
}

/// Eval-mode loss over a fixed set of samples.
pub fn evaluate_loss(
    net: &Network<f32>,
    samples: &[TrainSample],
    config: &TrainConfig,
    geo: &TrainGeometry,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(config.batch_size.max(1)) {
        let templates = stack_patches(&chunk.iter().map(|s| &s.template).collect::<Vec<_>>());
        let searches = stack_patches(&chunk.iter().map(|s| &s.search).collect::<Vec<_>>());
        let temb = net.forward_eval(&templates)?;
        let semb = net.forward_eval(&searches)?;
        let maps = xcorr_direct(&temb, &semb)?;
        let (loss, _) = batch_loss(&maps, chunk, config, geo)?;
        total += loss * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct TrainOutcome {
    /// Network with the best validation loss.
    pub best: Network<f32>,
    /// Network after the final epoch.
    pub last: Network<f32>,
    pub curve: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Pairs discarded because their ground truth fell off the map.
    pub skipped_pairs: usize,
}

/// Draw valid samples until `count` are collected; draws whose target
/// falls off the map are skipped and counted.
fn draw_samples(
    data: &[SequenceWithTruth],
    sampler: &mut PairSampler,
    count: usize,
    config: &TrainConfig,
    geo: &TrainGeometry,
    skipped: &mut usize,
) -> Result<Vec<TrainSample>> {
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > count * 100 {
            return Err(Error::data(
                "pair sampling keeps missing the similarity map; landmark motion exceeds the training search window".to_string(),
            ));
        }
        let draw = sampler.draw();
        match materialize(data, sampler, draw, config, geo)? {
            Some(s) => out.push(s),
            None => *skipped += 1,
        }
    }
    Ok(out)
}

/// Run the full training loop. `out_dir`, when given, receives
/// checkpoints and the loss curve CSV (`epoch,train_loss,val_loss`).
pub fn train(
    config: &TrainConfig,
    train_data: &[SequenceWithTruth],
    val_data: &[SequenceWithTruth],
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    for s in train_data.iter().chain(val_data) {
        if (s.sequence.spacing_mm_per_px - config.spacing_mm_per_px).abs() > 1e-12 {
            return Err(Error::config(format!(
                "sequence {} spacing {} differs from configured {}; resample first",
                s.sequence.id, s.sequence.spacing_mm_per_px, config.spacing_mm_per_px
            )));
        }
    }

    let mut net = Network::<f32>::new(config.profile.clone())?;
    net.init_kaiming(config.seed);
    let geo = TrainGeometry::for_config(&net, config)?;
    let mut adam = AdamState::new(&net.param_slices());

    let mut sampler = PairSampler::new(train_data, config.seed)?;
    let mut val_sampler = PairSampler::new(val_data, config.seed.wrapping_add(1))?;
    let mut skipped = 0usize;
    let val_samples = draw_samples(val_data, &mut val_sampler, config.val_pairs, config, &geo, &mut skipped)?;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut curve = Vec::with_capacity(config.epochs);
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut best = net.clone();

    for epoch in 0..config.epochs {
        let samples = draw_samples(train_data, &mut sampler, config.pairs_per_epoch, config, &geo, &mut skipped)?;
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for (batch_idx, chunk) in samples.chunks(config.batch_size).enumerate() {
            let loss = train_step(&mut net, &mut adam, chunk, config, &geo).map_err(|e| match e {
                Error::Numerical(msg) => {
                    Error::Numerical(format!("epoch {epoch}, batch {batch_idx}: {msg}"))
                }
                other => other,
            })?;
            epoch_loss += loss;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;
        let val_loss = evaluate_loss(&net, &val_samples, config, &geo)?;
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
        };
        progress(&log);
        curve.push(log);

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best = net.clone();
        }
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                save_checkpoint(&net, &dir.join(format!("epoch_{epoch:03}.ckpt")))?;
            }
        }
    }

    if let Some(dir) = out_dir {
        save_checkpoint(&best, &dir.join("best.ckpt"))?;
        save_checkpoint(&net, &dir.join("final.ckpt"))?;
        let curve_path = dir.join("loss_curve.csv");
        let mut text = String::from("epoch,train_loss,val_loss\n");
        for log in &curve {
            text.push_str(&format!("{},{},{}\n", log.epoch, log.train_loss, log.val_loss));
        }
        let mut f = std::fs::File::create(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&curve_path, e))?;
    }

    Ok(TrainOutcome {
        best,
        last: net,
        curve,
        best_epoch,
        skipped_pairs: skipped,
    })
}

/// Repeatedly optimize one fixed pair; returns the loss per step.
/// A learnability smoke test: the loss should collapse fast.
pub fn overfit_single_pair(
    config: &TrainConfig,
    data: &[SequenceWithTruth],
    steps: usize,
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut net = Network::<f32>::new(config.profile.clone())?;
    net.init_kaiming(config.seed);
    let geo = TrainGeometry::for_config(&net, config)?;
    let mut adam = AdamState::new(&net.param_slices());
    let mut sampler = PairSampler::new(data, config.seed)?;
    let mut skipped = 0usize;
    let sample = draw_samples(data, &mut sampler, 1, config, &geo, &mut skipped)?;
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        losses.push(train_step(&mut net, &mut adam, &sample, config, &geo)?);
    }
    Ok(losses)
}
