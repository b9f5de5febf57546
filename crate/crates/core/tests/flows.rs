use std::sync::Arc;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use nrlangevin_core::flows::{bump, check_divergence_free};
use nrlangevin_core::ode::flow_step;
use nrlangevin_core::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn warped() -> Arc<dyn TargetDistribution> {
    Arc::new(WarpedGaussianTarget::new(0.05).unwrap())
}

fn warped_points(n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| DVector::from_vec(vec![rng.random_range(-10.0..10.0), rng.random_range(-2.0..8.0)]))
        .collect()
}

#[test]
fn rotation_generator() {
    let j = make_rotation_2d();
    assert_eq!(j.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    assert_eq!(j.matrix() + j.matrix().transpose(), DMatrix::zeros(2, 2));
    assert_eq!(j.matrix() * DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, -1.0]));
}

#[test]
fn permutation_skew_entry_counts() {
    let j = make_permutation_skew(9, 42).unwrap();
    let m = j.matrix();
    assert_eq!(m.iter().filter(|&&v| v == 1.0).count(), 8);
    assert_eq!(m.iter().filter(|&&v| v == -1.0).count(), 8);
    assert_eq!(m.iter().filter(|&&v| v == 0.0).count(), 65);
    assert_eq!(make_permutation_skew(9, 42).unwrap(), j);
}

#[test]
fn permutation_skew_in_two_dimensions() {
    for seed in 0..5 {
        let m = make_permutation_skew(2, seed).unwrap().matrix().clone();
        assert!(m == *make_rotation_2d().matrix() || m == -make_rotation_2d().matrix());
    }
    assert!(make_permutation_skew(1, 0).is_err());
}

#[test]
fn permutation_skew_forms_a_path() {
    let d = 12;
    let m = make_permutation_skew(d, 7).unwrap().matrix().clone();
    let degrees: Vec<usize> = (0..d).map(|i| m.row(i).iter().filter(|v| **v != 0.0).count()).collect();
    assert_eq!(degrees.iter().filter(|&&k| k == 1).count(), 2);
    assert_eq!(degrees.iter().filter(|&&k| k == 2).count(), d - 2);
}

#[test]
fn skew_constructor_rejects_non_skew_input() {
    assert!(SkewMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).is_err());
    assert!(SkewMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 0.0])).is_err());
    let upper = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 9.0, 0.0, 3.0, 9.0, 9.0, 0.0]);
    let j = SkewMatrix::from_upper(&upper).unwrap();
    assert_eq!(j.matrix()[(2, 0)], -2.0);
}

#[test]
fn log_grad_flow_on_isotropic_gaussian_is_linear() {
    let alpha = 1.7;
    let beta = 0.6;
    let target: Arc<dyn TargetDistribution> = Arc::new(GaussianTarget::isotropic(2, alpha).unwrap());
    let j = make_rotation_2d();
    let flow = NonreversibleFlow::log_grad(j.clone(), beta, target).unwrap();
    let x = DVector::from_vec(vec![0.4, -1.1]);
    assert_relative_eq!(flow.evaluate(&x).unwrap(), -(j.matrix() * &x) * (alpha * beta), epsilon = 1e-15);
    assert_relative_eq!(flow.linear_matrix().unwrap(), -j.matrix() * (alpha * beta), epsilon = 1e-15);
}

#[test]
fn zero_beta_flow_vanishes() {
    let kinds = [
        FlowKind::LogGrad,
        FlowKind::Power { alpha: 0.5, ell_ref: 0.0 },
        FlowKind::Compact { lo: 0.1, hi: 0.9, ell_ref: 0.0 },
    ];
    for kind in kinds {
        let flow = NonreversibleFlow::new(kind, make_rotation_2d(), 0.0, warped()).unwrap();
        assert_eq!(flow.evaluate(&DVector::from_vec(vec![3.0, 1.0])).unwrap(), DVector::zeros(2));
        assert_eq!(flow.cost_per_eval(), (0, 0));
        assert_eq!(check_divergence_free(&flow, &warped_points(5, 1), 1e-4).unwrap(), 0.0);
    }
}

#[test]
fn flows_vanish_at_the_mode() {
    let mode = DVector::from_vec(vec![0.0, 5.0]);
    for kind in [FlowKind::LogGrad, FlowKind::Power { alpha: 1.0, ell_ref: 0.0 }] {
        let flow = NonreversibleFlow::new(kind, make_rotation_2d(), 2.0, warped()).unwrap();
        assert_eq!(flow.evaluate(&mode).unwrap(), DVector::zeros(2));
    }
}

#[test]
fn divergence_free_residuals_are_small() {
    let pts = warped_points(100, 3);
    let lg = NonreversibleFlow::log_grad(make_rotation_2d(), 1.0, warped()).unwrap();
    assert!(check_divergence_free(&lg, &pts, 1e-4).unwrap() <= 1e-4);

    let gauss: Arc<dyn TargetDistribution> = Arc::new(GaussianTarget::isotropic(3, 1.0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gpts: Vec<DVector<f64>> = (0..100).map(|_| DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0))).collect();
    let power = NonreversibleFlow::new(
        FlowKind::Power { alpha: 0.5, ell_ref: 0.0 },
        make_permutation_skew(3, 1).unwrap(),
        1.0,
        gauss,
    )
    .unwrap();
    assert!(check_divergence_free(&power, &gpts, 1e-4).unwrap() <= 1e-4);
}

#[test]
fn divergence_residual_shrinks_quadratically() {
    let pts = warped_points(20, 5);
    let kinds = [
        FlowKind::LogGrad,
        FlowKind::Power { alpha: 0.5, ell_ref: -5.0 },
        FlowKind::Compact { lo: 0.01, hi: 0.9, ell_ref: 0.0 },
    ];
    for kind in kinds {
        let flow = NonreversibleFlow::new(kind, make_rotation_2d(), 1.0, warped()).unwrap();
        let coarse = check_divergence_free(&flow, &pts, 1e-2).unwrap();
        let fine = check_divergence_free(&flow, &pts, 1e-3).unwrap();
        let slope = (coarse / fine).log10();
        assert!(slope > 1.7, "{kind:?}: {coarse} -> {fine}");
    }
}

#[test]
fn rk4_step_conserves_log_density_to_fifth_order() {
    let target = warped();
    let flow = NonreversibleFlow::log_grad(make_rotation_2d(), 1.0, target.clone()).unwrap();
    let x = DVector::from_vec(vec![4.0, 2.0]);
    let l0 = target.log_density(&x).unwrap();
    let pts: Vec<(f64, f64)> = (3..=7)
        .map(|k| {
            let h = 2f64.powi(-k);
            let y = flow_step(&FlowIntegrator::rk4(1), &flow, &x, h).unwrap();
            (h.ln(), (target.log_density(&y).unwrap() - l0).abs().ln())
        })
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope - 5.0).abs() < 0.4, "{slope}");
}

#[test]
fn bump_is_compactly_supported_and_peaks_at_midpoint() {
    assert_eq!(bump(0.1, 0.2, 0.6), 0.0);
    assert_eq!(bump(0.7, 0.2, 0.6), 0.0);
    assert_relative_eq!(bump(0.4, 0.2, 0.6), 1.0, epsilon = 1e-14);
    assert_eq!(bump(2.0, 1.0, 3.0), 1.0);
    assert_relative_eq!(bump(0.3, 0.2, 0.6), 0.5, epsilon = 1e-15);
    assert_relative_eq!(bump(0.25, 0.2, 0.6), bump(0.55, 0.2, 0.6), epsilon = 1e-15);
}

#[test]
fn invalid_flow_parameters() {
    let j = make_rotation_2d();
    assert!(NonreversibleFlow::new(FlowKind::Power { alpha: 0.0, ell_ref: 0.0 }, j.clone(), 1.0, warped()).is_err());
    assert!(NonreversibleFlow::new(FlowKind::Compact { lo: 0.5, hi: 0.2, ell_ref: 0.0 }, j.clone(), 1.0, warped()).is_err());
    assert!(NonreversibleFlow::log_grad(j.clone(), f64::NAN, warped()).is_err());
    assert!(NonreversibleFlow::log_grad(make_permutation_skew(3, 0).unwrap(), 1.0, warped()).is_err());
    let flow = NonreversibleFlow::log_grad(j, 1.0, warped()).unwrap();
    assert!(flow.evaluate(&DVector::zeros(3)).is_err());
}

proptest! {
    #[test]
    fn permutation_skew_is_exactly_skew(d in 2usize..40, seed in any::<u64>()) {
        let m = make_permutation_skew(d, seed).unwrap().matrix().clone();
        prop_assert_eq!(&m, &(-m.transpose()));
        prop_assert_eq!(m.iter().filter(|&&v| v == 1.0).count(), d - 1);
    }

    #[test]
    fn from_upper_is_exactly_skew(entries in prop::collection::vec(-5.0f64..5.0, 16)) {
        let j = SkewMatrix::from_upper(&DMatrix::from_row_slice(4, 4, &entries)).unwrap();
        prop_assert_eq!(j.matrix(), &(-j.matrix().transpose()));
        let neg = j.negated();
        prop_assert_eq!(neg.matrix(), &(-j.matrix()));
    }

    #[test]
    fn flow_is_linear_in_beta(beta in -20.0f64..20.0, x0 in -10.0f64..10.0, x1 in -3.0f64..8.0) {
        let x = DVector::from_vec(vec![x0, x1]);
        for kind in [FlowKind::LogGrad, FlowKind::Power { alpha: 0.3, ell_ref: -10.0 }, FlowKind::Compact { lo: 0.0, hi: 2.0, ell_ref: -3.0 }] {
            let f1 = NonreversibleFlow::new(kind, make_rotation_2d(), beta, warped()).unwrap();
            let f2 = f1.with_beta(2.0 * beta);
            prop_assert_eq!(f2.evaluate(&x).unwrap(), f1.evaluate(&x).unwrap() * 2.0);
        }
    }

    #[test]
    fn log_grad_flow_is_divergence_free_everywhere(x0 in -15.0f64..15.0, x1 in -10.0f64..10.0) {
        let flow = NonreversibleFlow::log_grad(make_rotation_2d(), 1.0, warped()).unwrap();
        let x = DVector::from_vec(vec![x0, x1]);
        let scale = flow.evaluate(&x).unwrap().norm().max(1.0);
        prop_assert!(check_divergence_free(&flow, &[x], 1e-4).unwrap() <= 1e-4 * scale);
    }
}
