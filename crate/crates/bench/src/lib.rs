//! Shared fixtures for the benchmarks.

use voicemorph_core::simulate::{gen_population, SimConfig, Simulation};

/// A small simulated population with `n_speakers` x `utterances` rows.
pub fn population(n_speakers: usize, utterances: usize) -> Simulation {
    let config = SimConfig { n_speakers, utterances_per_speaker: utterances, ..SimConfig::default() };
    gen_population(&config).expect("valid simulation config")
}

/// Deterministic pseudo-scores in [-1, 1).
pub fn scores(n: usize, seed: u64) -> Vec<f64> {
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}
