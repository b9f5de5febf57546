//! Benchmark fixtures shared by the criterion benches.

use std::sync::Arc;

use nrlangevin_core::experiments::{find_mode, SamplerSpec};
use nrlangevin_core::targets::data::{bin_points, synthetic_pima, synthetic_pine};
use nrlangevin_core::{
    make_permutation_skew, make_rotation_2d, CoxParams, DVector, FlowIntegrator, LogGaussianCoxTarget,
    LogisticRegressionTarget, SplittingConfig, TargetDistribution, WarpedGaussianTarget,
};

/// A target and a start point.
pub struct Fixture {
    pub target: Arc<dyn TargetDistribution>,
    pub x0: DVector<f64>,
}

pub fn warped() -> Fixture {
    Fixture { target: Arc::new(WarpedGaussianTarget::new(0.05).unwrap()), x0: DVector::from_vec(vec![0.0, 5.0]) }
}

pub fn logistic() -> Fixture {
    let table = synthetic_pima(2024);
    let design = table.standardized_design().unwrap();
    let target: Arc<dyn TargetDistribution> =
        Arc::new(LogisticRegressionTarget::with_isotropic_prior(design, table.response, 100.0).unwrap());
    let x0 = find_mode(target.as_ref(), &DVector::zeros(9), 10_000).unwrap();
    Fixture { target, x0 }
}

pub fn cox(grid: usize) -> Fixture {
    let counts = bin_points(&synthetic_pine(2024), grid);
    let target: Arc<dyn TargetDistribution> =
        Arc::new(LogGaussianCoxTarget::new(grid, &counts, CoxParams::default()).unwrap());
    let x0 = find_mode(target.as_ref(), &DVector::zeros(grid * grid), 20_000).unwrap();
    Fixture { target, x0 }
}

/// MALA-based splitting sampler with RK4 flow substeps.
pub fn sampler(f: &Fixture, dt: f64, beta: f64, substeps: usize) -> SplittingConfig {
    let d = f.target.dim();
    let j = if d == 2 { make_rotation_2d() } else { make_permutation_skew(d, 1).unwrap() };
    let spec = SamplerSpec { integrator: FlowIntegrator::rk4(substeps), ..SamplerSpec::default() };
    spec.build(f.target.clone(), j, dt, beta, &f.x0).unwrap()
}
