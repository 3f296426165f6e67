//! Shared fixtures for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pqd_core::{Denoiser, SampleBatch};

/// A randomly initialized (untrained) denoiser; benchmark costs do not
/// depend on the parameter values.
pub fn bench_model() -> Denoiser {
    Denoiser::init(2, 0, 42)
}

pub fn gaussian_batch(rows: usize, cols: usize, seed: u64) -> SampleBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-3.0..3.0)).collect();
    SampleBatch::new(rows, cols, data).unwrap()
}
