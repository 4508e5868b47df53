use std::hint::black_box;

use argmine::ensemble::vote;
use argmine::metrics::{f1_suite, krippendorff_alpha};
use argmine::pairing::encode_distance;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ratings: Vec<Vec<usize>> = (0..10)
        .map(|_| (0..10_000).map(|_| rng.random_range(0..3)).collect())
        .collect();
    c.bench_function("alpha_10x10000", |b| b.iter(|| krippendorff_alpha(black_box(&ratings)).unwrap()));

    let gold: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..5)).collect();
    let pred: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..5)).collect();
    let names = ["a", "b", "c", "d", "e"];
    c.bench_function("f1_suite_10000", |b| b.iter(|| f1_suite(black_box(&pred), &gold, &names).unwrap()));

    let votes: Vec<Vec<usize>> = (0..1000).map(|_| (0..10).map(|_| rng.random_range(0..3)).collect()).collect();
    c.bench_function("vote_1000x10", |b| {
        b.iter(|| votes.iter().map(|v| vote(black_box(v)).unwrap()).sum::<usize>())
    });
    c.bench_function("encode_distance_sweep", |b| {
        b.iter(|| (-12i64..=12).map(|d| encode_distance(black_box(d)).popcount()).sum::<usize>())
    });
}

criterion_group!(benches, metrics);
criterion_main!(benches);
