//! Shared fixtures for the pipeline benchmarks.

use aad_core::{AnomalyType, AudioClip, MelSpectrogram, ScoreRecord, SyntheticConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A normal 10 s synthetic clip.
pub fn clip(seed: u64) -> AudioClip {
    let cfg = SyntheticConfig {
        n_train: 2,
        n_eval_normal: 1,
        n_eval_anomalous: 1,
        duration_secs: 10.0,
        seed,
        ..Default::default()
    };
    cfg.generate().expect("valid config").swap_remove(0).audio
}

/// A 401×80 spectrogram of uniform noise in `[-10, 0)`.
pub fn spectrogram(seed: u64) -> MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..401 * 80).map(|_| rng.gen_range(-10.0..0.0)).collect();
    MelSpectrogram::new(format!("s{seed}"), 401, 80, values).expect("valid shape")
}

/// `n` scores, one in ten anomalous and shifted upward.
pub fn score_records(n: usize, seed: u64) -> Vec<ScoreRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let anomalous = i % 10 == 0;
            let score = rng.gen::<f64>() + if anomalous { 0.5 } else { 0.0 };
            let kind = if anomalous {
                AnomalyType::BrokenBoard
            } else {
                AnomalyType::None
            };
            ScoreRecord::new(format!("c{i}"), score, kind)
        })
        .collect()
}
