//! Sweep throughput: sequential runner vs rayon dispatch, plus raw engine
//! step rate. The sequential path is always available; the rayon path needs
//! the `parallel` feature (on by default).

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};

use popsim_core::engine::{default_max_steps, run_trial};
use popsim_core::experiments::{run_sweep_serial, MPolicy, MaxStepsPolicy, SweepPlan};
use popsim_core::protocol::ProtocolKind;

#[cfg(feature = "parallel")]
use popsim_core::experiments::run_sweep;

fn plan(threads: usize) -> SweepPlan {
    SweepPlan {
        protocol: ProtocolKind::Lm,
        n_list: vec![2048],
        m_policy: MPolicy::Auto,
        trials_per_n: 16,
        base_seed: 7,
        max_steps: MaxStepsPolicy::Default,
        threads,
    }
}

fn bench_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("lm_sweep_n2048_x16");
    group
        .sample_size(10)
        .measurement_time(Duration::from_secs(8));

    group.bench_function("serial", |b| {
        b.iter(|| black_box(run_sweep_serial(&plan(1)).unwrap().records.len()))
    });

    #[cfg(feature = "parallel")]
    group.bench_function("rayon_all_threads", |b| {
        b.iter(|| black_box(run_sweep(&plan(0)).unwrap().records.len()))
    });

    group.finish();
}

fn bench_single_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("single_run");
    group.sample_size(10);

    group.bench_function("lm_n4096", |b| {
        b.iter(|| {
            black_box(
                run_trial(ProtocolKind::Lm, 4096, 1728, 11, default_max_steps(4096))
                    .unwrap()
                    .steps,
            )
        })
    });

    group.bench_function("baseline_n512", |b| {
        b.iter(|| {
            black_box(
                run_trial(ProtocolKind::Baseline, 512, 1, 11, default_max_steps(512))
                    .unwrap()
                    .steps,
            )
        })
    });

    group.finish();
}

criterion_group!(benches, bench_sweep, bench_single_run);
criterion_main!(benches);
