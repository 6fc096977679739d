//! Shared fixtures for the criterion benchmarks.

use sonotrack::nn::network::{default_profile, Network};
use sonotrack::nn::Tensor;

/// Kaiming-initialized default network (untrained weights; benchmark
/// cost does not depend on the parameter values).
pub fn bench_network(seed: u64) -> Network<f32> {
    let mut net = Network::<f32>::new(default_profile()).expect("default profile is valid");
    net.init_kaiming(seed);
    net
}

/// Deterministic pseudo-random patch tensor in [0, 1].
pub fn bench_patch(side: usize, seed: u64) -> Tensor<f32> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..side * side).map(|_| rng.gen::<f32>()).collect();
    Tensor::from_vec(&[1, 1, side, side], data).expect("shape matches")
}
