use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hydrolab::cell::{EffectiveTable, MinimaxOptions, TableOptions};
use hydrolab::grid::Axis;
use hydrolab::model::{MicroModel, PeriodicPotential};
use hydrolab::par;
use hydrolab::transport::{wasserstein, EmpiricalMeasure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", false), ("sequential", true)]
}

fn table_build(c: &mut Criterion) {
    let model = MicroModel::quadratic(1, PeriodicPotential::SinSquared { amplitude: 1.0 }).unwrap();
    let opts = TableOptions {
        minimax: MinimaxOptions {
            modes: 4,
            qgrid: 64,
            restarts: 2,
            max_iter: 200,
            ..MinimaxOptions::default()
        },
        ..TableOptions::default()
    };
    let mut group = c.benchmark_group("effective_table");
    group.sample_size(10);
    for (name, sequential) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(sequential);
            b.iter(|| {
                let t = EffectiveTable::build(
                    &model,
                    vec![Axis::uniform(-2.0, 2.0, 9).unwrap()],
                    vec![Axis::uniform(-1.0, 1.0, 5).unwrap()],
                    &opts,
                )
                .unwrap();
                black_box(t.max_width())
            });
        });
    }
    par::set_sequential(false);
    group.finish();
}

fn transport_batch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cloud = |n: usize| EmpiricalMeasure::new(2, (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let pairs: Vec<(EmpiricalMeasure, EmpiricalMeasure)> = (0..64).map(|_| (cloud(40), cloud(40))).collect();
    let mut group = c.benchmark_group("wasserstein_batch");
    for (name, sequential) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(sequential);
            b.iter(|| black_box(par::map(&pairs, |(a, g)| wasserstein(a, g, 2.0).unwrap().0)));
        });
    }
    par::set_sequential(false);
    group.finish();
}

criterion_group!(benches, table_build, transport_batch);
criterion_main!(benches);
