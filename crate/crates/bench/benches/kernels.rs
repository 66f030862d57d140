//! Criterion microbenchmarks: tiled vs per-element weight recovery and the
//! lookup path, at sizes small enough for quick iteration. The CLI `bench`
//! subcommand covers the cache-pressure regime with large stores.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use roast_core::lookup::{lookup_forward, LookupRequest};
use roast_core::matmul::{hashednet_mm_forward, roast_mm_forward, MatmulPlan};
use roast_core::store::{CompressedStore, ModuleSpec, SharingMode, TileConfig};

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_forward");
    for &dim in &[256usize, 512] {
        let mut store = CompressedStore::create(1 << 18, 1.0, 42, SharingMode::Global).unwrap();
        let binding = store
            .register_module(
                &ModuleSpec::matmul(dim, dim, dim).with_tile(TileConfig::tiles(16, 16, 64)),
            )
            .unwrap();
        let plan = MatmulPlan::new(&binding).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((32, dim), |_| rng.gen_range(-1.0..1.0));

        group.bench_with_input(BenchmarkId::new("roast", dim), &dim, |b, _| {
            b.iter(|| roast_mm_forward(&store, &plan, &x.view()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("hashednet", dim), &dim, |b, _| {
            b.iter(|| hashednet_mm_forward(&store, &plan, &x.view()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dense", dim), &dim, |b, _| {
            let w = Array2::from_shape_fn((dim, dim), |_| rng.gen_range(-1.0f64..1.0));
            b.iter(|| x.dot(&w))
        });
    }
    group.finish();
}

fn bench_lookup(c: &mut Criterion) {
    let mut group = c.benchmark_group("lookup_forward");
    for &z in &[1usize, 16] {
        let mut store = CompressedStore::create(1 << 18, 1.0, 42, SharingMode::Global).unwrap();
        let binding = store
            .register_module(
                &ModuleSpec::lookup(vec![10_000, 64], 64).with_tile(TileConfig::chunk(z)),
            )
            .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let indices: Vec<usize> = (0..256).map(|_| rng.gen_range(0..10_000)).collect();
        let req = LookupRequest::new(&binding, &indices);
        group.bench_with_input(BenchmarkId::new("chunk", z), &z, |b, _| {
            b.iter(|| lookup_forward(&store, &req).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_lookup);
criterion_main!(benches);
