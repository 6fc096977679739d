//! Challenge-style accuracy metrics and per-frame latency benchmarking.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use crate::config::Constants;
use crate::data::{Annotation, Point, Sequence};
use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::tracker::{track_sequence, TrackOptions, Trajectory};

/// Per-frame Euclidean errors in millimetres between a predicted
/// trajectory and ground-truth annotations.
///
/// Frame indices must align exactly; anything missing on either side is
/// a usage error listing the offending frames.
pub fn euclidean_errors(
    pred: &Trajectory,
    gt: &[Annotation],
    spacing_mm_per_px: f64,
) -> Result<Vec<(usize, f64)>> {
    let gt_by_frame: BTreeMap<usize, Point> = gt.iter().map(|a| (a.frame, a.position)).collect();
    let pred_frames: BTreeMap<usize, Point> =
        pred.entries.iter().map(|e| (e.frame, e.position)).collect();

    let missing_pred: Vec<usize> = gt_by_frame
        .keys()
        .filter(|f| !pred_frames.contains_key(f))
        .copied()
        .collect();
    let missing_gt: Vec<usize> = pred_frames
        .keys()
        .filter(|f| !gt_by_frame.contains_key(f))
        .copied()
        .collect();
    if !missing_pred.is_empty() || !missing_gt.is_empty() {
        return Err(Error::usage(format!(
            "frame mismatch between prediction and ground truth; frames missing from prediction: {missing_pred:?}, frames missing from ground truth: {missing_gt:?}"
        )));
    }

    Ok(gt_by_frame
        .iter()
        .map(|(&frame, gt_pos)| {
            let pred_pos = pred_frames[&frame];
            (frame, pred_pos.distance(gt_pos) * spacing_mm_per_px)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// 95th percentile by linear interpolation between order statistics.
    pub p95: f64,
}

/// Mean, population sigma and interpolated 95th percentile of a series.
pub fn aggregate(series: &[f64]) -> Result<Aggregate> {
    if series.is_empty() {
        return Err(Error::usage("cannot aggregate an empty error series".to_string()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Aggregate {
        mean,
        std: var.sqrt(),
        p95: percentile(series, 0.95),
    })
}

/// Linear-interpolation percentile (rank `(n-1) * p` on the sorted
/// series, fractional part interpolated).
pub fn percentile(series: &[f64], p: f64) -> f64 {
    debug_assert!(!series.is_empty());
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Accuracy and latency of one tracked landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkReport {
    pub landmark: String,
    /// `(frame, error_mm)` pairs.
    pub errors: Vec<(usize, f64)>,
    /// Per-frame tracking latencies (frame 0 carries none).
    pub latencies_ms: Vec<f64>,
    /// Error exceeded the switch-failure threshold at some frame.
    pub switch_failure: bool,
}

/// Report over any number of landmarks; aggregates are recomputed from
/// the stored series rather than stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingReport {
    pub switch_threshold_mm: f64,
    pub landmarks: Vec<LandmarkReport>,
}

impl TrackingReport {
    pub fn new(switch_threshold_mm: f64) -> TrackingReport {
        TrackingReport {
            switch_threshold_mm,
            landmarks: Vec::new(),
        }
    }

    /// Score one landmark's trajectory against its ground truth and add
    /// it to the report.
    pub fn push_landmark(
        &mut self,
        landmark: impl Into<String>,
        pred: &Trajectory,
        gt: &[Annotation],
        spacing_mm_per_px: f64,
    ) -> Result<()> {
        let errors = euclidean_errors(pred, gt, spacing_mm_per_px)?;
        let switch_failure = errors.iter().any(|(_, e)| *e > self.switch_threshold_mm);
        self.landmarks.push(LandmarkReport {
            landmark: landmark.into(),
            errors,
            latencies_ms: pred.entries.iter().skip(1).map(|e| e.latency_ms).collect(),
            switch_failure,
        });
        Ok(())
    }

    pub fn any_switch_failure(&self) -> bool {
        self.landmarks.iter().any(|l| l.switch_failure)
    }

    /// Aggregate over all frames of all landmarks.
    pub fn overall(&self) -> Result<Aggregate> {
        let all: Vec<f64> = self
            .landmarks
            .iter()
            .flat_map(|l| l.errors.iter().map(|(_, e)| *e))
            .collect();
        aggregate(&all)
    }

    /// Human-readable summary, one row per landmark.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        out.push_str("landmark              mean_mm   std_mm   p95_mm   lat_ms  switch\n");
        for l in &self.landmarks {
            let series: Vec<f64> = l.errors.iter().map(|(_, e)| *e).collect();
            let agg = aggregate(&series).unwrap_or(Aggregate {
                mean: f64::NAN,
                std: f64::NAN,
                p95: f64::NAN,
            });
            let lat = if l.latencies_ms.is_empty() {
                f64::NAN
            } else {
                l.latencies_ms.iter().sum::<f64>() / l.latencies_ms.len() as f64
            };
            out.push_str(&format!(
                "{:<20} {:>8.3} {:>8.3} {:>8.3} {:>8.2}  {}\n",
                l.landmark,
                agg.mean,
                agg.std,
                agg.p95,
                lat,
                if l.switch_failure { "FAIL" } else { "ok" }
            ));
        }
        out
    }

    /// Write the report CSV: the full per-frame series, from which every
    /// aggregate is recomputable.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("landmark,frame,error_mm,latency_ms\n");
        text.push_str(&format!("#switch_threshold_mm={}\n", self.switch_threshold_mm));
        for l in &self.landmarks {
            for (i, (frame, err)) in l.errors.iter().enumerate() {
                // Latencies align with frames 1..; frame 0 has none.
                let lat = if i == 0 { 0.0 } else { l.latencies_ms.get(i - 1).copied().unwrap_or(0.0) };
                text.push_str(&format!("{},{},{},{}\n", l.landmark, frame, err, lat));
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<TrackingReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some("landmark,frame,error_mm,latency_ms") => {}
            other => {
                return Err(Error::data(format!(
                    "{}: unexpected report header {other:?}",
                    path.display()
                )))
            }
        }
        let mut threshold = Constants::default().switch_failure_mm();
        let mut by_landmark: BTreeMap<String, Vec<(usize, f64, f64)>> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let row = lineno + 2;
            if let Some(rest) = line.strip_prefix("#switch_threshold_mm=") {
                threshold = rest
                    .parse()
                    .map_err(|_| Error::data(format!("{}: row {row}: bad threshold", path.display())))?;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::data(format!(
                    "{}: row {row}: expected 4 fields, got {}",
                    path.display(),
                    fields.len()
                )));
            }
            let frame: usize = fields[1]
                .parse()
                .map_err(|_| Error::data(format!("{}: row {row}: bad frame", path.display())))?;
            let err: f64 = fields[2]
                .parse()
                .map_err(|_| Error::data(format!("{}: row {row}: bad error", path.display())))?;
            let lat: f64 = fields[3]
                .parse()
                .map_err(|_| Error::data(format!("{}: row {row}: bad latency", path.display())))?;
            if !by_landmark.contains_key(fields[0]) {
                order.push(fields[0].to_string());
            }
            by_landmark.entry(fields[0].to_string()).or_default().push((frame, err, lat));
        }
        let mut report = TrackingReport::new(threshold);
        for name in order {
            let rows = &by_landmark[&name];
            let errors: Vec<(usize, f64)> = rows.iter().map(|(f, e, _)| (*f, *e)).collect();
            let latencies_ms: Vec<f64> = rows.iter().skip(1).map(|(_, _, l)| *l).collect();
            let switch_failure = errors.iter().any(|(_, e)| *e > threshold);
            report.landmarks.push(LandmarkReport {
                landmark: name,
                errors,
                latencies_ms,
                switch_failure,
            });
        }
        Ok(report)
    }
}

/// Per-frame latency statistics of one measured tracking run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub frames: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
}

fn latency_stats(latencies: &[f64]) -> LatencyStats {
    LatencyStats {
        frames: latencies.len(),
        mean_ms: latencies.iter().sum::<f64>() / latencies.len() as f64,
        median_ms: percentile(latencies, 0.5),
        p99_ms: percentile(latencies, 0.99),
    }
}

/// Run the tracker `warmup + repeats` times over a sequence and return
/// per-frame latency statistics for each measured (post-warmup) run.
///
/// Tracking itself is single-threaded; callers must not time runs
/// concurrently if numbers are to be comparable.
pub fn benchmark_latency(
    net: &Network<f32>,
    seq: &Sequence,
    initial: Point,
    opts: &TrackOptions,
    warmup: usize,
    repeats: usize,
) -> Result<Vec<LatencyStats>> {
    if warmup < 1 {
        return Err(Error::usage("latency benchmark needs warmup >= 1".to_string()));
    }
    if repeats < 1 {
        return Err(Error::usage("latency benchmark needs repeats >= 1".to_string()));
    }
    for _ in 0..warmup {
        track_sequence(net, seq, initial, opts)?;
    }
    let mut stats = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let traj = track_sequence(net, seq, initial, opts)?;
        let lats: Vec<f64> = traj.entries.iter().skip(1).map(|e| e.latency_ms).collect();
        stats.push(latency_stats(&lats));
    }
    Ok(stats)
}
