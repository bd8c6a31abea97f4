use caption_agent::retrieval::{score_all_sequential, top_n, Vector, VectorStore};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn store(rng: &mut ChaCha8Rng, t: usize, dim: usize) -> VectorStore {
    let mut s = VectorStore::new(dim, "bench");
    for i in 0..t {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        s.insert(format!("e{i}"), Vector::new(v).unwrap()).unwrap();
    }
    s
}

fn scoring(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut group = c.benchmark_group("score_all");
    for (t, dim) in [(1_000, 16), (20_000, 384)] {
        let s = store(&mut rng, t, dim);
        let q = Vector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let label = format!("{t}x{dim}");
        group.bench_with_input(BenchmarkId::new("sequential", &label), &s, |b, s| {
            b.iter(|| score_all_sequential(black_box(&q), s).unwrap())
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", &label), &s, |b, s| {
            b.iter(|| caption_agent::retrieval::score_all_parallel(black_box(&q), s).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("top_4", &label), &s, |b, s| {
            b.iter(|| top_n(black_box(&q), s, 4).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scoring);
criterion_main!(benches);
