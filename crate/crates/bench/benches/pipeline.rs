use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dsios_bench::Fixture;
use dsios_core::beamformer::update_beamformers;
use dsios_core::phase::{build_quadratic_forms, solve_qcqp, vectorize};
use dsios_core::system::compose_effective;
use dsios_core::wmmse::update_wmmse;
use dsios_core::{run_algorithm2, ActiveBlocks, SchemeKind, SchemeSpec, SolverSettings};
use std::hint::black_box;

const SIZES: [usize; 3] = [16, 64, 256];

fn blocks(c: &mut Criterion) {
    let settings = SolverSettings::default();
    let mut group = c.benchmark_group("blocks");
    for l in SIZES {
        let f = Fixture::new(l, 0);
        group.bench_with_input(BenchmarkId::new("compose", l), &f, |b, f| {
            b.iter(|| compose_effective(black_box(&f.channels), black_box(&f.ios)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("wmmse", l), &f, |b, f| {
            b.iter(|| update_wmmse(&f.effective, black_box(&f.beamformers), &f.run.noise).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("beamformer", l), &f, |b, f| {
            b.iter(|| {
                update_beamformers(
                    &f.effective,
                    &f.wmmse,
                    &f.run.weights,
                    &f.beamformers,
                    f.run.budgets,
                    ActiveBlocks::ALL,
                    &settings.bisection,
                )
                .unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("phase_forms", l), &f, |b, f| {
            b.iter(|| build_quadratic_forms(&f.channels, &f.beamformers, &f.wmmse, &f.run.weights, &f.run.noise).unwrap())
        });
        let qf = build_quadratic_forms(&f.channels, &f.beamformers, &f.wmmse, &f.run.weights, &f.run.noise).unwrap();
        let qp = vectorize(&qf);
        group.bench_with_input(BenchmarkId::new("phase_solve", l), &f, |b, f| {
            b.iter(|| solve_qcqp(&qp, black_box(&f.ios), &settings.pgd).unwrap())
        });
    }
    group.finish();
}

fn outer_loop(c: &mut Criterion) {
    let mut group = c.benchmark_group("run");
    group.sample_size(10);
    for l in [16, 64] {
        let f = Fixture::new(l, 0);
        for kind in [SchemeKind::DsIos, SchemeKind::SsIos, SchemeKind::WoIos] {
            let scheme = SchemeSpec::new(kind);
            group.bench_with_input(BenchmarkId::new(kind.label(), l), &f, |b, f| {
                b.iter(|| run_algorithm2(&f.channels, &f.run, &scheme, &SolverSettings::default()).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, blocks, outer_loop);
criterion_main!(benches);
