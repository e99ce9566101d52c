//! Seeded random streams.
//!
//! Every stochastic task draws from a ChaCha stream keyed by the master seed
//! and selected by the task index, so parallel workers never share state and
//! a sweep reproduces bit-for-bit regardless of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TaskRng = ChaCha8Rng;

pub fn task_rng(master_seed: u64, task: u64) -> TaskRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(task);
    rng
}

/// `n` offsets drawn uniformly from `[-bound, bound]`.
pub fn uniform_offsets(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if bound == 0.0 {
                0.0
            } else {
                rng.random_range(-bound..=bound)
            }
        })
        .collect()
}
