//! Shared fixtures for the criterion benches.

use mlpbank_core::rng::SplitMix64;
use mlpbank_core::Tensor;

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f32> {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0) as f32).unwrap()
}

pub fn random_index(shape: Vec<usize>, extent: usize, seed: u64) -> Tensor<u32> {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(shape, |_| (rng.next_u64() % extent as u64) as u32).unwrap()
}
