//! Shared helpers for core integration tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ska_core::Array;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ska_core::params::seeded_rng(seed, 0)
}

pub fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Array::from_vec(shape, data)
}

pub fn max_abs_diff(a: &Array, b: &Array) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
