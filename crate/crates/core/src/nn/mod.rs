//! Minimal deterministic tensor and reverse-mode differentiation engine:
//! exactly the layers the embedding network needs, with finite-difference
//! verification built in.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod optim;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use network::{default_profile, format_profile, parse_profile, LayerSpec, Mode, Network, Tape};
pub use optim::{adam_step, AdamParams, AdamState};
pub use tensor::{Scalar, Tensor};
