//! Fixtures shared by the benchmarks.

use effort_core::motion::N_JOINTS;
use effort_core::MotionSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A motion of uniformly random joint positions.
pub fn random_motion(frames: usize, seed: u64) -> MotionSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = (0..frames * N_JOINTS)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    MotionSequence::new(20, N_JOINTS, positions, None).expect("valid motion")
}

pub fn random_series(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let y = x.iter().map(|v| v + 0.3 * rng.random::<f64>()).collect();
    (x, y)
}
