//! Siamese fully-convolutional landmark tracking for 2D ultrasound-like
//! sequences.
//!
//! A shared embedding network turns a fixed template patch (cropped
//! around the first-frame annotation) and a per-frame search patch into
//! feature maps; their cross-correlation gives a similarity map whose
//! constrained maximum is the tracked landmark. A running-average
//! location prior, ramped in over time, damps look-alike distractors.
//!
//! The crate also ships everything needed to exercise the tracker end to
//! end without clinical data: a deterministic speckle-sequence generator,
//! a training loop, challenge-style accuracy metrics and a latency
//! benchmark.

pub mod config;
pub mod data;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod similarity;
pub mod synth;
pub mod tracker;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
