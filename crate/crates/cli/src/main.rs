//! `sonotrack`: train, run and benchmark the Siamese landmark tracker.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 data error,
//! 3 numerical failure, 4 switch failure detected under `eval --strict`.

mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use sonotrack::data::{
    load_sequence_with_truth, read_annotations, resample, scale_annotations, Annotation, Point,
    SequenceWithTruth,
};
use sonotrack::error::{Error, Result};
use sonotrack::metrics::{benchmark_latency, TrackingReport};
use sonotrack::nn::checkpoint::load_checkpoint;
use sonotrack::nn::network::Network;
use sonotrack::synth::{parse_scene, write_scene, write_suite};
use sonotrack::tracker::{track_sequence, write_trajectory, TrackOptions, Trajectory};
use sonotrack::train::train;
use sonotrack::verify::full_suite;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "sonotrack", version, about = "Siamese landmark tracking for 2D ultrasound-like sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark suite (or a single scene).
    Synth(SynthArgs),
    /// Train the embedding network on a generated suite.
    Train(TrainArgs),
    /// Track the landmarks of a sequence with a trained checkpoint.
    Track(TrackArgs),
    /// Score a predicted trajectory against ground truth.
    Eval(EvalArgs),
    /// Measure per-frame tracking latency.
    Bench(BenchArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct CommonConfig {
    /// key=value configuration file (defaults < file < env < flags).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Output directory for the suite (train/, val/, test/).
    #[arg(long)]
    out: PathBuf,
    /// Which suite to generate.
    #[arg(long, default_value = "default")]
    suite: String,
    /// Generate a single scene from a scene spec file instead.
    #[arg(long, conflicts_with = "suite", conflicts_with_all = ["seed"])]
    scene: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Suite directory holding train/ and val/ splits.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the loss curve.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    pairs_per_epoch: Option<usize>,
    #[arg(long)]
    val_pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Loss variant: l2 (primary) or logistic (ablation baseline).
    #[arg(long)]
    loss: Option<String>,
    /// Search crop extent for training pairs.
    #[arg(long)]
    train_search_size: Option<usize>,
    /// Network profile, e.g. conv:1:16:7:2,bn,relu,...
    #[arg(long)]
    net_profile: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Grid sigma_loss_mm is measured on: image or map.
    #[arg(long)]
    sigma_loss_grid: Option<String>,
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    common: CommonConfig,
    #[arg(long)]
    ckpt: PathBuf,
    /// Sequence directory (frames + meta.txt + gt_landmark_*.csv).
    #[arg(long)]
    seq: PathBuf,
    /// Output trajectory CSV; multi-landmark runs get _lmNN suffixes.
    #[arg(long)]
    out: PathBuf,
    /// Track only this landmark index.
    #[arg(long)]
    landmark: Option<usize>,
    /// Disable the temporal location prior (ablation).
    #[arg(long)]
    no_regularizer: bool,
    /// Write measured per-frame latencies instead of zeros (makes the
    /// CSV non-reproducible across runs).
    #[arg(long)]
    timing: bool,
    /// Landmarks tracked in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    search_size: Option<usize>,
    /// Correlation path: auto, direct or fft.
    #[arg(long)]
    xcorr: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Predicted trajectory CSV.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth annotations CSV (frame,x,y).
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    spacing: Option<f64>,
    /// Write the per-frame report CSV here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Exit nonzero if any switch failure is flagged.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonConfig,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    seq: PathBuf,
    #[arg(long, default_value_t = 0)]
    landmark: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    search_size: Option<usize>,
    #[arg(long)]
    no_regularizer: bool,
    #[arg(long)]
    xcorr: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of seeds to run each check with.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path too.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            std::process::exit(if is_help { 0 } else { 1 });
        }
    };
    let outcome = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Track(args) => run_track(args),
        Command::Eval(args) => run_eval(args),
        Command::Bench(args) => run_bench(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn echo_config(config: &RunConfig) {
    print!("resolved configuration:\n{}", config.resolved_text());
}

fn run_synth(args: SynthArgs) -> Result<i32> {
    let mut config = RunConfig::resolve(args.common.config.as_deref())?;
    config.set_opt("seed", &args.seed);
    echo_config(&config);
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let warnings = if let Some(scene_file) = &args.scene {
        let text = std::fs::read_to_string(scene_file).map_err(|e| Error::io(scene_file, e))?;
        let scene = parse_scene(&text)?;
        let dir = args.out.join(&scene.id);
        write_scene(&dir, &scene)?
    } else {
        if args.suite != "default" {
            return Err(Error::usage(format!("unknown suite {:?} (try: default)", args.suite)));
        }
        write_suite(&args.out, config.get_u64("seed")?)?
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    config.write_beside(&args.out)?;
    println!("wrote synthetic data under {}", args.out.display());
    Ok(0)
}

fn run_train(args: TrainArgs) -> Result<i32> {
    let mut config = RunConfig::resolve(args.common.config.as_deref())?;
    config.set_opt("lr", &args.lr);
    config.set_opt("epochs", &args.epochs);
    config.set_opt("batch_size", &args.batch_size);
    config.set_opt("pairs_per_epoch", &args.pairs_per_epoch);
    config.set_opt("val_pairs", &args.val_pairs);
    config.set_opt("seed", &args.seed);
    config.set_opt("loss", &args.loss);
    config.set_opt("train_search_size", &args.train_search_size);
    config.set_opt("net_profile", &args.net_profile);
    config.set_opt("checkpoint_every", &args.checkpoint_every);
    config.set_opt("sigma_loss_grid", &args.sigma_loss_grid);
    echo_config(&config);

    let train_config = config.train_config()?;
    let train_data = load_split(&args.data.join("train"), &train_config.spacing_mm_per_px, train_config.template_size)?;
    let val_data = load_split(&args.data.join("val"), &train_config.spacing_mm_per_px, train_config.template_size)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let outcome = train(&train_config, &train_data, &val_data, Some(&args.out), |log| {
        println!(
            "epoch {:>3}: train_loss {:.6} val_loss {:.6}",
            log.epoch, log.train_loss, log.val_loss
        );
    })?;
    if outcome.skipped_pairs > 0 {
        eprintln!(
            "warning: skipped {} pairs whose ground truth fell outside the similarity map",
            outcome.skipped_pairs
        );
    }
    println!(
        "best validation loss at epoch {} -> {}",
        outcome.best_epoch,
        args.out.join("best.ckpt").display()
    );
    config.write_beside(&args.out)?;
    Ok(0)
}

/// Load a split directory, resampling every sequence (and scaling its
/// annotations) to the working spacing when needed.
fn load_split(dir: &Path, spacing: &f64, min_extent: usize) -> Result<Vec<SequenceWithTruth>> {
    let mut out = sonotrack::data::load_split_dir(dir)?;
    for s in &mut out {
        if (s.sequence.spacing_mm_per_px - spacing).abs() > 1e-12 {
            let src = s.sequence.spacing_mm_per_px;
            s.sequence = resample(&s.sequence, *spacing, min_extent)?;
            for (_, anns) in &mut s.truths {
                *anns = scale_annotations(anns, src, *spacing);
            }
        }
    }
    Ok(out)
}

fn initial_annotation(truth: &[Annotation], name: &str) -> Result<Point> {
    truth
        .iter()
        .find(|a| a.frame == 0)
        .map(|a| a.position)
        .ok_or_else(|| Error::data(format!("landmark {name} has no frame-0 annotation to start from")))
}

fn run_track(args: TrackArgs) -> Result<i32> {
    let mut config = RunConfig::resolve(args.common.config.as_deref())?;
    config.set_opt("search_size", &args.search_size);
    config.set_opt("xcorr", &args.xcorr);
    echo_config(&config);

    let constants = config.constants()?;
    let net = load_checkpoint(&args.ckpt)?;
    let mut data = load_sequence_with_truth(&args.seq)?;
    if (data.sequence.spacing_mm_per_px - constants.spacing_mm_per_px).abs() > 1e-12 {
        let src = data.sequence.spacing_mm_per_px;
        data.sequence = resample(&data.sequence, constants.spacing_mm_per_px, constants.template_size)?;
        for (_, anns) in &mut data.truths {
            *anns = scale_annotations(anns, src, constants.spacing_mm_per_px);
        }
    }
    if data.truths.is_empty() {
        return Err(Error::data(format!(
            "{}: no gt_landmark_*.csv found; nothing to initialize tracking from",
            args.seq.display()
        )));
    }

    let opts = TrackOptions {
        constants,
        regularizer: !args.no_regularizer,
        xcorr: config.xcorr_path()?,
    };

    let selected: Vec<usize> = match args.landmark {
        Some(idx) => {
            if idx >= data.truths.len() {
                return Err(Error::usage(format!(
                    "landmark {idx} out of range; sequence has {}",
                    data.truths.len()
                )));
            }
            vec![idx]
        }
        None => (0..data.truths.len()).collect(),
    };

    let trajectories = track_landmarks(&net, &data, &selected, &opts, args.jobs)?;

    for (pos, (idx, traj)) in trajectories.iter().enumerate() {
        let path = if selected.len() == 1 {
            args.out.clone()
        } else {
            suffixed_path(&args.out, &format!("_lm{idx:02}"))
        };
        write_trajectory(&path, traj, args.timing)?;
        let lost = traj.entries.iter().filter(|e| e.lost).count();
        println!(
            "landmark {idx} ({}): {} frames -> {} ({} lost)",
            data.truths[*idx].0,
            traj.entries.len(),
            path.display(),
            lost
        );
        if pos == 0 {
            config.write_beside(&path)?;
        }
    }
    Ok(0)
}

fn track_landmarks(
    net: &Network<f32>,
    data: &SequenceWithTruth,
    selected: &[usize],
    opts: &TrackOptions,
    jobs: usize,
) -> Result<Vec<(usize, Trajectory)>> {
    let run_one = |idx: usize| -> Result<(usize, Trajectory)> {
        let (name, anns) = &data.truths[idx];
        let initial = initial_annotation(anns, name)?;
        Ok((idx, track_sequence(net, &data.sequence, initial, opts)?))
    };
    if jobs <= 1 || selected.len() <= 1 {
        return selected.iter().map(|&i| run_one(i)).collect();
    }
    // Landmarks are independent; split them over scoped threads and
    // reassemble in order.
    let results: Vec<Result<Vec<(usize, Trajectory)>>> = std::thread::scope(|scope| {
        selected
            .chunks(selected.len().div_ceil(jobs))
            .map(|chunk| scope.spawn(move || chunk.iter().map(|&i| run_one(i)).collect()))
            .collect::<Vec<_>>()
            .into_iter()
            .map(|h| h.join().expect("tracking thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(selected.len());
    for r in results {
        out.extend(r?);
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out)
}

fn suffixed_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}

fn run_eval(args: EvalArgs) -> Result<i32> {
    let mut config = RunConfig::resolve(args.common.config.as_deref())?;
    config.set_opt("spacing_mm_per_px", &args.spacing);
    let constants = config.constants()?;
    let spacing = constants.spacing_mm_per_px;

    let pred = sonotrack::tracker::read_trajectory(&args.pred)?;
    let gt = read_annotations(&args.gt)?;
    let mut report = TrackingReport::new(constants.switch_failure_mm());
    report.push_landmark(
        args.pred.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        &pred,
        &gt,
        spacing,
    )?;

    let overall = report.overall()?;
    print!("{}", report.summary_table());
    println!(
        "overall: mean {:.2} mm, std {:.2} mm, p95 {:.2} mm over {} frames",
        overall.mean,
        overall.std,
        overall.p95,
        report.landmarks.iter().map(|l| l.errors.len()).sum::<usize>()
    );
    if let Some(path) = &args.report {
        report.write_csv(path)?;
        config.write_beside(path)?;
        println!("report -> {}", path.display());
    }
    if args.strict && report.any_switch_failure() {
        eprintln!("switch failure detected (error exceeded {:.1} mm)", report.switch_threshold_mm);
        return Ok(4);
    }
    Ok(0)
}

fn run_bench(args: BenchArgs) -> Result<i32> {
    let mut config = RunConfig::resolve(args.common.config.as_deref())?;
    config.set_opt("search_size", &args.search_size);
    config.set_opt("xcorr", &args.xcorr);
    echo_config(&config);
    let constants = config.constants()?;

    let net = load_checkpoint(&args.ckpt)?;
    let data = load_sequence_with_truth(&args.seq)?;
    let (name, anns) = data
        .truths
        .get(args.landmark)
        .ok_or_else(|| Error::usage(format!("landmark {} out of range", args.landmark)))?;
    let initial = initial_annotation(anns, name)?;
    let opts = TrackOptions {
        constants,
        regularizer: !args.no_regularizer,
        xcorr: config.xcorr_path()?,
    };
    let stats = benchmark_latency(&net, &data.sequence, initial, &opts, args.warmup, args.repeats)?;
    println!("search {}x{} ({} warmup, {} repeats):", constants.search_size, constants.search_size, args.warmup, args.repeats);
    for (i, s) in stats.iter().enumerate() {
        println!(
            "run {}: {} frames, mean {:.2} ms, median {:.2} ms, p99 {:.2} ms",
            i, s.frames, s.mean_ms, s.median_ms, s.p99_ms
        );
    }
    Ok(0)
}

fn run_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let seeds: Vec<u64> = (1..=args.seeds).collect();
    let reports = full_suite(&seeds)?;
    let mut failed = 0usize;
    for r in &reports {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!("{status}  {:<40} max rel err {:.3e}", r.name, r.max_rel_error);
        if !r.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::numerical(format!(
            "{failed} of {} gradient checks failed",
            reports.len()
        )));
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(0)
}
