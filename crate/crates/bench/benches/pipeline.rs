use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gaitdis_bench::{clips, score_matrix};
use gaitdis_core::engine::{extract_signature, TrainConfig, Trainer};
use gaitdis_core::evalkit::{rank1, tar_at_far};
use gaitdis_core::nets::{frames_to_tensor, ArchConfig, GaitNet};

fn encoder_forward(c: &mut Criterion) {
    let net = GaitNet::<f32>::init(ArchConfig { large_model: false, n_subjects: 4 }, 0).unwrap();
    let clip = &clips(1, 20)[0];
    let frames: Vec<&[f32]> = clip.frames.iter().take(8).map(|f| f.data()).collect();
    let x = frames_to_tensor::<f32>(&frames);
    c.bench_function("encoder_forward_8_frames", |b| b.iter(|| net.encoder.forward_eval(black_box(&x)).unwrap()));
    c.bench_function("extract_signature_20_frames", |b| b.iter(|| extract_signature(black_box(clip), &net).unwrap()));
}

fn train_step(c: &mut Criterion) {
    let data = clips(2, 20);
    let cfg = TrainConfig { clip_len: 4, clips_per_batch: 4, ..TrainConfig::default() };
    let mut trainer = Trainer::new(&data, cfg).unwrap();
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("step_4_clips_x_4_frames", |b| b.iter(|| trainer.step(&data).unwrap()));
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let m = score_matrix(200);
    c.bench_function("rank1_200x200", |b| b.iter(|| rank1(black_box(&m)).unwrap()));
    c.bench_function("tar_at_far_200x200", |b| b.iter(|| tar_at_far(black_box(&m), &[0.01, 0.05]).unwrap()));
}

criterion_group!(benches, encoder_forward, train_step, metrics);
criterion_main!(benches);
