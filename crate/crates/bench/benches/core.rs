use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use effort_bench::{random_motion, random_series};
use effort_core::eval::spearman;
use effort_core::model::{random_latents, Conditioning};
use effort_core::{baseline_metrics, default_group_map, effort_metrics, Denoiser, DenoiserConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_effort_metrics(c: &mut Criterion) {
    let groups = default_group_map();
    let mut g = c.benchmark_group("effort_metrics");
    for frames in [60, 240] {
        let m = random_motion(frames, 1);
        g.bench_with_input(BenchmarkId::from_parameter(frames), &m, |b, m| {
            b.iter(|| effort_metrics(black_box(m), &groups).unwrap())
        });
    }
    g.finish();
}

fn bench_denoiser(c: &mut Criterion) {
    let model = Denoiser::randomized(DenoiserConfig::desk(), 3, 0.2).unwrap();
    let metrics = baseline_metrics();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = c.benchmark_group("denoiser_forward");
    g.sample_size(20);
    for frames in [32, 120] {
        let z = random_latents(frames, 7, 32, &mut rng, 1.0);
        g.bench_with_input(BenchmarkId::from_parameter(frames), &z, |b, z| {
            b.iter(|| {
                model
                    .forward(
                        black_box(z),
                        500.0,
                        Conditioning {
                            text: Some(1),
                            metrics: &metrics,
                        },
                    )
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn bench_spearman(c: &mut Criterion) {
    let mut g = c.benchmark_group("spearman");
    // n = 7 takes the exact permutation path, n = 50 the t approximation.
    for n in [7, 50] {
        let (x, y) = random_series(n, 4);
        g.bench_with_input(BenchmarkId::from_parameter(n), &(x, y), |b, (x, y)| {
            b.iter(|| spearman(black_box(x), black_box(y)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_effort_metrics, bench_denoiser, bench_spearman);
criterion_main!(benches);
