//! Fixtures shared by the benchmarks.

use gaitdis_core::evalkit::{Channel, ScoreMatrix};
use gaitdis_core::synthgait::{make_dataset, DatasetOptions};
use gaitdis_core::Clip;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic clips of `subjects` walkers, two conditions, one clip each.
pub fn clips(subjects: usize, n_frames: usize) -> Vec<Clip> {
    let opts = DatasetOptions { n_frames, ..DatasetOptions::default() };
    make_dataset(subjects, 2, 1, 0, &opts)
        .expect("synthetic dataset")
        .clips
        .into_iter()
        .map(|c| c.clip)
        .collect()
}

/// Random `n × n` score matrix with `n / 2` subjects, two entries each.
pub fn score_matrix(n: usize) -> ScoreMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels: Vec<String> = (0..n).map(|i| format!("s{}", i / 2)).collect();
    let scores = (0..n * n).map(|_| rng.random::<f64>()).collect();
    ScoreMatrix::new(scores, labels.clone(), labels, Channel::Fused).expect("valid matrix")
}
