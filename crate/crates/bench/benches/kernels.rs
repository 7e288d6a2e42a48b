use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use gbulab_bench::sine_problem;
use gbulab_core::analysis::monotonicity_lemma_check;
use gbulab_core::pde;
use gbulab_core::spectral::principal_eigenpair;
use gbulab_core::stepper::{self, step};
use gbulab_core::{GridDomain, StepControl};

fn rhs(c: &mut Criterion) {
    let mut group = c.benchmark_group("rhs");
    for (dim, n) in [(1usize, 401usize), (1, 1601), (2, 65), (2, 129)] {
        let spec = sine_problem(dim, n, 3.0, 4.0, 1.0);
        group.bench_with_input(BenchmarkId::new(format!("{dim}d"), n), &spec, |b, spec| {
            b.iter(|| pde::rhs(spec, black_box(spec.u0())))
        });
    }
    group.finish();
}

fn explicit_step(c: &mut Criterion) {
    let spec = sine_problem(2, 65, 3.0, 4.0, 1.0);
    let state = spec.initial_state();
    let dt = stepper::stable_dt(&state, &spec, &StepControl::default());
    c.bench_function("step 2d 65", |b| b.iter(|| step(black_box(&state), &spec, dt).unwrap()));
}

fn short_run(c: &mut Criterion) {
    let spec = sine_problem(1, 101, 3.0, 2.5, 1.0);
    let control = StepControl {
        t_end: 1e-3,
        ..Default::default()
    };
    c.bench_function("run 1d 101 to 1e-3", |b| b.iter(|| stepper::run(&spec, &control).unwrap()));
}

fn eigen(c: &mut Criterion) {
    let g1 = GridDomain::unit_interval(401).unwrap();
    let g2 = GridDomain::unit_square(41).unwrap();
    c.bench_function("eig 1d 401", |b| b.iter(|| principal_eigenpair(&g1, 1e-10).unwrap()));
    c.bench_function("eig 2d 41", |b| b.iter(|| principal_eigenpair(&g2, 1e-10).unwrap()));
}

fn lemma(c: &mut Criterion) {
    let a = [1.5, -2.0, 0.3, 4.0];
    let b = [-0.7, 4.0, 1.0, 2.5];
    c.bench_function("monotonicity lemma 4d", |bch| {
        bch.iter(|| monotonicity_lemma_check(black_box(&a), black_box(&b), 3.7).unwrap())
    });
}

criterion_group!(benches, rhs, explicit_step, short_run, eigen, lemma);
criterion_main!(benches);
