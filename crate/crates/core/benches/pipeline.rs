use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use semivar::action::{action, criticality_test, el_residual, TolerancePolicy};
use semivar::euler_lagrange::decompose;
use semivar::fbs::example_model;
use semivar::semimartingale::simulate;
use semivar::variations::random_variation_bank;
use semivar::{make_grid, make_qem, PotentialSpec};

const N: usize = 256;
const M: usize = 4000;

fn pipeline(seed: u64) -> bool {
    let grid = make_grid(N).unwrap();
    let free = make_qem(PotentialSpec::Zero);
    let e = simulate(&example_model(), &grid, M, seed).unwrap();
    let s = action(&e, &free).unwrap();
    let d = decompose(&el_residual(&e, &free).unwrap()).unwrap();
    let bank = random_variation_bank(seed, 8, 10.0).unwrap();
    let crit = criticality_test(&e, &free, &bank, TolerancePolicy::default(), None).unwrap();
    s.value.is_finite() && d.energy_a.is_finite() && crit.rows.len() == 8
}

fn bench_pools(c: &mut Criterion) {
    let mut group = c.benchmark_group("example_pipeline");
    group.sample_size(10);
    let full = rayon::current_num_threads();
    for threads in [1, full] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| pipeline(3)))
        });
    }
    group.finish();

    let grid = make_grid(N).unwrap();
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    for threads in [1, full] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| simulate(&example_model(), &grid, M, 1).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_pools);
criterion_main!(benches);
