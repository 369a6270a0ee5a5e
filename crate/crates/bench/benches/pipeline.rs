use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use hloc_bench::{noise_panorama, random_map, random_model, random_queries};
use hloc_core::augment::{Effect, EffectGrid};
use hloc_core::descriptor::{describe_blockmean, describe_hog};
use hloc_core::imaging::resize;
use hloc_core::localization::{batch_localize, localize_global, localize_hierarchical, Mode};

fn descriptors(c: &mut Criterion) {
    let p = noise_panorama(512, 128, 1);
    let mut g = c.benchmark_group("describe");
    g.bench_function("hog_512x128", |b| {
        b.iter(|| describe_hog(black_box(&p), 16, 8).unwrap())
    });
    g.bench_function("blockmean_512x128", |b| {
        b.iter(|| describe_blockmean(black_box(&p), 16, 4).unwrap())
    });
    let big = noise_panorama(1280, 320, 2);
    g.bench_function("resize_1280x320_to_512x128", |b| {
        b.iter(|| resize(black_box(&big), 512, 128).unwrap())
    });
    g.finish();
}

fn augmentation(c: &mut Criterion) {
    let p = noise_panorama(512, 128, 3);
    let grid = EffectGrid::default();
    let mut g = c.benchmark_group("augment");
    for effect in [
        Effect::Spotlight,
        Effect::Brightness,
        Effect::Contrast,
        Effect::Saturation,
        Effect::Rotation,
    ] {
        g.bench_function(BenchmarkId::from_parameter(effect), |b| {
            b.iter(|| grid.apply(black_box(&p), effect, 2, 7).unwrap())
        });
    }
    g.finish();
}

fn localization(c: &mut Criterion) {
    let mut g = c.benchmark_group("localize");
    for dim in [192, 2048, 4096] {
        let map = random_map(dim, 4);
        let model = random_model(dim, 5);
        let queries = random_queries(64, dim, 6);
        g.bench_function(BenchmarkId::new("hierarchical", dim), |b| {
            b.iter(|| localize_hierarchical(&model, &map, black_box(&queries[0])).unwrap())
        });
        g.bench_function(BenchmarkId::new("global", dim), |b| {
            b.iter(|| localize_global(&map, black_box(&queries[0])).unwrap())
        });
        g.bench_function(BenchmarkId::new("batch64_hierarchical", dim), |b| {
            b.iter(|| batch_localize(&model, &map, black_box(&queries), Mode::Hierarchical))
        });
    }
    g.finish();
}

criterion_group!(benches, descriptors, augmentation, localization);
criterion_main!(benches);
