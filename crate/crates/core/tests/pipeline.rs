//! End-to-end pipeline test at miniature scale: generate, train a tiny
//! profile briefly, track, evaluate. Verifies the pieces compose, not
//! accuracy (the acceptance suite covers the full-scale behavior).

use sonotrack::config::Constants;
use sonotrack::data::{load_split_dir, save_annotations};
use sonotrack::metrics::TrackingReport;
use sonotrack::nn::network::LayerSpec;
use sonotrack::similarity::xcorr::XcorrPath;
use sonotrack::synth::{generate, write_scene, Motion, SceneSpec, Structure, StructureRole, StructureShape};
use sonotrack::tracker::{track_sequence, TrackOptions};
use sonotrack::train::{train, TrainConfig};

fn mini_profile() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d { in_channels: 1, out_channels: 8, kernel: 5, stride: 2 },
        LayerSpec::BatchNorm { eps: 1e-5, momentum: 0.1 },
        LayerSpec::Relu,
        LayerSpec::Conv2d { in_channels: 8, out_channels: 8, kernel: 3, stride: 1 },
    ]
}

fn mini_scene(id: &str, seed: u64, amp_col_mm: f64) -> SceneSpec {
    SceneSpec {
        id: id.to_string(),
        width: 128,
        height: 128,
        spacing_mm_per_px: 0.27,
        fps: 15.0,
        frame_count: 30,
        seed,
        speckle_amp: 0.18,
        noise_level: 0.01,
        global_motion: Motion {
            amp_mm: (0.4, amp_col_mm),
            period_frames: 14.0,
            phase: 0.7,
            drift_mm_per_frame: (0.0, 0.0),
        },
        structures: vec![
            Structure {
                name: "landmark".to_string(),
                role: StructureRole::Target,
                shape: StructureShape::Blob { radius_px: 5.0 },
                base_px: (64.0, 64.0),
                contrast: 0.7,
                attached: true,
                motion: Motion::none(),
            },
            Structure {
                name: "vessel".to_string(),
                role: StructureRole::Clutter,
                shape: StructureShape::VesselEllipse { r_row_px: 7.0, r_col_px: 5.0 },
                base_px: (30.0, 100.0),
                contrast: -0.5,
                attached: true,
                motion: Motion::none(),
            },
        ],
    }
}

#[test]
fn generate_train_track_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    for (i, scene) in [
        mini_scene("seq_a", 11, 1.3),
        mini_scene("seq_b", 12, 1.0),
        mini_scene("seq_c", 13, 1.1),
    ]
    .iter()
    .enumerate()
    {
        let split = if i < 2 { "train" } else { "val" };
        write_scene(&data_dir.join(split).join(&scene.id), scene).unwrap();
    }

    let train_data = load_split_dir(&data_dir.join("train")).unwrap();
    let val_data = load_split_dir(&data_dir.join("val")).unwrap();
    assert_eq!(train_data.len(), 2);
    assert_eq!(train_data[0].truths[0].1.len(), 30);

    let config = TrainConfig {
        profile: mini_profile(),
        batch_size: 8,
        lr: 3e-4,
        epochs: 6,
        seed: 5,
        pairs_per_epoch: 48,
        val_pairs: 16,
        template_size: 33,
        search_size: 63,
        ..TrainConfig::default()
    };
    let out_dir = dir.path().join("ckpt");
    let outcome = train(&config, &train_data, &val_data, Some(&out_dir), |_| {}).unwrap();
    let first = outcome.curve.first().unwrap().train_loss;
    let last = outcome.curve.last().unwrap().train_loss;
    assert!(last < first, "training did not reduce the loss: {first} -> {last}");
    assert!(out_dir.join("best.ckpt").is_file());

    // Track the validation sequence with the trained net.
    let net = sonotrack::nn::checkpoint::load_checkpoint(&out_dir.join("best.ckpt")).unwrap();
    let seq = &val_data[0].sequence;
    let gt = &val_data[0].truths[0].1;
    let initial = gt[0].position;
    let opts = TrackOptions {
        constants: Constants {
            template_size: 33,
            search_size: 95,
            ..Constants::default()
        },
        regularizer: true,
        xcorr: XcorrPath::Auto,
    };
    let traj = track_sequence(&net, seq, initial, &opts).unwrap();
    assert_eq!(traj.entries.len(), 30);

    // Step bound holds on the emitted trajectory.
    let d_max = opts.constants.d_max_px();
    for pair in traj.entries.windows(2) {
        assert!(pair[1].position.distance(&pair[0].position) < d_max);
    }

    // Evaluation plumbing: errors exist for every frame, report round
    // trips, and the miniature tracker stays on the structure (well
    // within the switch-failure threshold).
    let mut report = TrackingReport::new(opts.constants.switch_failure_mm());
    report.push_landmark("landmark_00", &traj, gt, seq.spacing_mm_per_px).unwrap();
    assert_eq!(report.landmarks[0].errors.len(), 30);
    assert!(!report.any_switch_failure());

    let report_path = dir.path().join("report.csv");
    report.write_csv(&report_path).unwrap();
    let back = TrackingReport::read_csv(&report_path).unwrap();
    assert_eq!(back, report);

    // Identical annotations evaluate to zero error.
    let gt_path = dir.path().join("gt_copy.csv");
    save_annotations(&gt_path, gt).unwrap();
    let reread = sonotrack::data::read_annotations(&gt_path).unwrap();
    let self_errors = sonotrack::metrics::euclidean_errors(
        &sonotrack::tracker::Trajectory {
            spacing_mm_per_px: seq.spacing_mm_per_px,
            entries: gt
                .iter()
                .map(|a| sonotrack::tracker::TrajectoryEntry {
                    frame: a.frame,
                    position: a.position,
                    score: 1.0,
                    latency_ms: 0.0,
                    lost: false,
                })
                .collect(),
        },
        &reread,
        seq.spacing_mm_per_px,
    )
    .unwrap();
    assert!(self_errors.iter().all(|(_, e)| *e == 0.0));
}
