use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform Xavier/Glorot initialization on `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(fan_in: usize, fan_out: usize, seed: u64) -> Array2<f64> {
    xavier_with_rng(fan_in, fan_out, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn xavier_with_rng(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..=bound))
}
