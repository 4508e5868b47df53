use std::hint::black_box;

use argmine::gradcheck::{toy_problem, GradcheckConfig};
use argmine::neural::{ForwardMode, Variant};
use argmine::training::{loss_and_grads, LossWeights};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch32_len24");
    group.sample_size(20);
    for variant in [Variant::ResArg, Variant::ResAttArg] {
        let cfg = GradcheckConfig {
            batch: 32,
            seq_len: 24,
            vocab: 500,
            ..GradcheckConfig::new(variant, 1)
        };
        let (model, batch, golds) = toy_problem(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        group.bench_with_input(BenchmarkId::new("predict", variant), &batch, |b, batch| {
            b.iter(|| model.predict(black_box(batch)).unwrap())
        });
        let w = LossWeights::default();
        group.bench_with_input(BenchmarkId::new("train_step", variant), &batch, |b, batch| {
            b.iter(|| loss_and_grads(&model, black_box(batch), &golds, &w, ForwardMode::TRAIN, 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward);
criterion_main!(benches);
