use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use nrlangevin_bench::{cox, logistic, sampler, warped};
use nrlangevin_core::diagnostics::ess_of;
use nrlangevin_core::gaussian_analysis::{
    numerical_asymptotic_variance, numerical_invariant_covariance, one_step_matrices, solve_stein,
};
use nrlangevin_core::{DVector, LinearModel, Ordering, ReversibleMode, VarianceConvention};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    let cases = [
        ("warped", warped(), 0.5, 10.0, 1),
        ("logistic", logistic(), 0.003, 6.0, 2),
        ("cox16", cox(16), 0.1, 2.0, 4),
    ];
    for (name, fixture, dt, beta, substeps) in &cases {
        for (label, b) in [("mala", 0.0), ("split", *beta)] {
            let splitter = sampler(fixture, *dt, b, *substeps).prepare().unwrap();
            let mut state = splitter.initial_state(fixture.x0.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            group.bench_function(BenchmarkId::new(label, name), |bench| {
                bench.iter(|| {
                    // restart a chain that left the stable region
                    if splitter.step(&mut state, &mut rng).is_err() {
                        state = splitter.initial_state(fixture.x0.clone()).unwrap();
                    }
                })
            });
        }
    }
    group.finish();
}

fn gaussian_analysis(c: &mut Criterion) {
    let model = LinearModel::isotropic(1.0, 1.0, 0.01, 2, ReversibleMode::Exact, Ordering::NonreversibleFirst).unwrap();
    let affine = one_step_matrices(&model).unwrap();
    c.bench_function("invariant_covariance", |b| b.iter(|| numerical_invariant_covariance(&affine).unwrap()));
    let m = DMatrix::identity(2, 2);
    c.bench_function("asymptotic_variance", |b| {
        b.iter(|| numerical_asymptotic_variance(&model, &m, &DVector::zeros(2), VarianceConvention::GreenKubo).unwrap())
    });
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for d in [8, 32] {
        let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let b = &raw * (0.9 / raw.norm());
        let q = DMatrix::identity(d, d);
        c.bench_with_input(BenchmarkId::new("solve_stein", d), &d, |bench, _| bench.iter(|| solve_stein(&b, &q).unwrap()));
    }
}

fn ess(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = 0.0f64;
    let series: Vec<f64> = (0..100_000)
        .map(|_| {
            x = 0.9 * x + rng.random_range(-1.0..1.0);
            x
        })
        .collect();
    c.bench_function("ess_ar1_1e5", |b| b.iter(|| ess_of(&series).unwrap()));
}

criterion_group!(benches, steps, gaussian_analysis, ess);
criterion_main!(benches);
