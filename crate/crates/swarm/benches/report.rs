//! Sequential vs data-parallel report summarisation.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use gridhall_core::exec::Exec;
use gridhall_swarm::report::{summarize, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench(c: &mut Criterion) {
    let names: Vec<String> = (0..16).map(|i| format!("route{i}")).collect();
    let mut g = c.benchmark_group("summarize");
    for n in [100_000usize, 1_000_000] {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<Sample> = (0..n)
            .map(|_| Sample {
                route: rng.gen_range(0..16),
                latency_us: rng.gen_range(0..2_000_000),
                ok: rng.gen_bool(0.99),
            })
            .collect();
        for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
            g.bench_with_input(BenchmarkId::new(name, n), &samples, |b, s| {
                b.iter(|| summarize(black_box(s), &names, exec))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
