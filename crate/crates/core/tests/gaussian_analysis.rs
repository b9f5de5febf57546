use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use nrlangevin_core::gaussian_analysis::*;
use nrlangevin_core::linalg::{expm, norm2, principal_log};
use nrlangevin_core::{make_rotation_2d, Ordering, ReversibleMode};
use proptest::prelude::*;

mod common;
use common::table_variance;

const ORDERINGS: [Ordering; 2] = [Ordering::ReversibleFirst, Ordering::NonreversibleFirst];
const MODES: [ReversibleMode; 2] = [ReversibleMode::Exact, ReversibleMode::ThetaHalf];

#[test]
fn lyapunov_isotropic() {
    let a = DMatrix::identity(2, 2) * 3.0;
    let x = solve_lyapunov_continuous(&a, &DMatrix::identity(2, 2)).unwrap();
    assert_relative_eq!(x, DMatrix::identity(2, 2) / 6.0, epsilon = 1e-15);
}

#[test]
fn lyapunov_zero_rhs() {
    let x = solve_lyapunov_continuous(&DMatrix::identity(3, 3), &DMatrix::zeros(3, 3)).unwrap();
    assert_eq!(x, DMatrix::zeros(3, 3));
}

/// ∫₀^∞ e^{−At} e^{−Aᵀt} dt by composite Simpson on a truncated horizon.
fn lyapunov_by_quadrature(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (t_max, n) = (40.0, 40_000);
    let h = t_max / n as f64;
    let step = expm(&(-a * h));
    let mut e = DMatrix::identity(a.nrows(), a.ncols());
    let mut acc = DMatrix::zeros(a.nrows(), a.ncols());
    for k in 0..=n {
        let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += &e * e.transpose() * w;
        e = &step * e;
    }
    acc * (h / 3.0)
}

#[test]
fn lyapunov_matches_quadrature_for_random_stable_drift() {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.7, -0.2, -0.4, 1.3, 0.5, 0.3, -0.6, 0.9]);
    let x = solve_lyapunov_continuous(&a, &DMatrix::identity(3, 3)).unwrap();
    let q = lyapunov_by_quadrature(&a);
    assert!((&x - &q).amax() < 1e-8, "{}", (&x - &q).amax());
    let resid = &a * &x + &x * a.transpose() - DMatrix::identity(3, 3);
    assert!(resid.norm() < 1e-10 * 3f64.sqrt());
}

#[test]
fn stein_scalar_case() {
    let rho = 0.6;
    let b = DMatrix::identity(2, 2) * rho;
    let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
    let x = solve_stein(&b, &c).unwrap();
    assert_relative_eq!(x, &c / (rho * rho - 1.0), max_relative = 1e-14);
}

#[test]
fn stein_matches_neumann_series() {
    let b = DMatrix::from_row_slice(3, 3, &[0.5, 0.3, -0.1, -0.2, 0.6, 0.2, 0.1, -0.3, 0.4]);
    let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, -0.4, 0.0, -0.4, 1.5]);
    let x = solve_stein(&b, &c).unwrap();
    let mut series = DMatrix::zeros(3, 3);
    let mut bk = DMatrix::identity(3, 3);
    for _ in 0..400 {
        series -= &bk * &c * bk.transpose();
        bk = &b * bk;
    }
    assert!((&x - &series).amax() < 1e-10);
}

#[test]
fn stein_zero_rhs() {
    let b = DMatrix::identity(2, 2) * 0.3;
    assert_eq!(solve_stein(&b, &DMatrix::zeros(2, 2)).unwrap(), DMatrix::zeros(2, 2));
}

#[test]
fn zero_deterministic_part_gives_noise_covariance() {
    let l = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let k = numerical_invariant_covariance(&OneStepAffine { b: DMatrix::zeros(2, 2), l: l.clone() }).unwrap();
    assert_relative_eq!(k, l, epsilon = 1e-15);
}

#[test]
fn expanding_scheme_is_rejected() {
    let affine = OneStepAffine { b: DMatrix::identity(2, 2) * 1.01, l: DMatrix::identity(2, 2) };
    assert!(matches!(
        numerical_invariant_covariance(&affine),
        Err(nrlangevin_core::Error::Unstable(_))
    ));
}

#[test]
fn tables_reproduced_exactly() {
    for &mode in &MODES {
        for &ordering in &ORDERINGS {
            for p in [1, 2] {
                for beta in [0.5, 1.0, 2.0] {
                    for dt in [0.05, 0.1, 0.2] {
                        let model = LinearModel::isotropic(1.0, beta, dt, p, mode, ordering).unwrap();
                        let k = numerical_invariant_covariance(&one_step_matrices(&model).unwrap()).unwrap();
                        let expected = table_variance(mode, ordering, p, 1.0, beta, dt);
                        assert_relative_eq!(k[(0, 0)], expected, max_relative = 1e-10);
                        assert_relative_eq!(k[(1, 1)], expected, max_relative = 1e-10);
                    }
                }
            }
        }
    }
}

#[test]
fn printed_reversible_first_p2_entry_has_flipped_denominator() {
    let (a, b, h) = (1.0f64, 1.0f64, 0.1f64);
    let e = (-2.0 * a * h).exp();
    let q = (a * b * h).powi(4);
    let printed = (1.0 - e) * (q + 4.0) / (2.0 * a * (e * (q + 4.0) - 4.0));
    let model = LinearModel::isotropic(a, b, h, 2, ReversibleMode::Exact, Ordering::ReversibleFirst).unwrap();
    let k = numerical_invariant_covariance(&one_step_matrices(&model).unwrap()).unwrap();
    assert!(printed < 0.0);
    assert_relative_eq!(k[(0, 0)], -printed, max_relative = 1e-12);
}

#[test]
fn tables_hold_for_other_alpha() {
    for &mode in &MODES {
        for &ordering in &ORDERINGS {
            for p in [1, 2] {
                let model = LinearModel::isotropic(1.7, 0.8, 0.07, p, mode, ordering).unwrap();
                let k = numerical_invariant_covariance(&one_step_matrices(&model).unwrap()).unwrap();
                assert_relative_eq!(k[(0, 0)], table_variance(mode, ordering, p, 1.7, 0.8, 0.07), max_relative = 1e-10);
            }
        }
    }
}

#[test]
fn exact_chain_without_flow_is_unbiased() {
    for dt in [1e-3, 0.1, 0.5, 2.0] {
        for &ordering in &ORDERINGS {
            let model = LinearModel::isotropic(1.3, 0.0, dt, 1, ReversibleMode::Exact, ordering).unwrap();
            let k = numerical_invariant_covariance(&one_step_matrices(&model).unwrap()).unwrap();
            let sigma = model.sigma_inf().unwrap();
            assert!((&k - &sigma).amax() < 1e-12);
        }
    }
}

#[test]
fn theta_scheme_preserves_gaussian_for_general_drift() {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.7, -0.2, -0.4, 1.3, 0.5, 0.3, -0.6, 0.9]);
    let j = nrlangevin_core::make_permutation_skew(3, 1).unwrap();
    let model = LinearModel::new(a, j, 0.0, 0.3, 1, ReversibleMode::ThetaHalf, Ordering::NonreversibleFirst).unwrap();
    let (m, s) = model.reversible_parts().unwrap();
    let sigma = model.sigma_inf().unwrap();
    let resid = &m * &sigma * m.transpose() + s - &sigma;
    assert!(resid.amax() < 1e-12);
}

#[test]
fn bias_route_agrees_with_direct_difference() {
    for &mode in &MODES {
        for &ordering in &ORDERINGS {
            let model = LinearModel::isotropic(1.0, 2.0, 0.1, 1, mode, ordering).unwrap();
            let k = numerical_invariant_covariance(&one_step_matrices(&model).unwrap()).unwrap();
            let direct = k - model.sigma_inf().unwrap();
            let bias = invariant_covariance_bias(&model).unwrap();
            assert!((&direct - &bias).amax() < 1e-12 * direct.amax().max(1.0), "{direct} {bias}");
        }
    }
}

fn odd_order_slope(p: usize, mode: ReversibleMode, ordering: Ordering) -> f64 {
    let pts: Vec<(f64, f64)> = (4..=10)
        .map(|k| {
            let dt = 2f64.powi(-k);
            let model = LinearModel::isotropic(1.0, 1.0, dt, p, mode, ordering).unwrap();
            let e = norm2(&invariant_covariance_bias(&model).unwrap());
            (dt.ln(), e.ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn invariant_measure_orders_are_odd() {
    for &mode in &MODES {
        for &ordering in &ORDERINGS {
            for p in 1..=6 {
                let expected = (p | 1) as f64;
                let slope = odd_order_slope(p, mode, ordering);
                assert!((slope - expected).abs() <= 0.15, "p={p} {mode:?} {ordering:?}: slope {slope}");
            }
        }
    }
}

#[test]
fn bias_grows_with_beta() {
    let mut prev = 0.0;
    for beta in [1.0, 2.0, 4.0, 8.0] {
        let model = LinearModel::isotropic(1.0, beta, 0.02, 1, ReversibleMode::Exact, Ordering::NonreversibleFirst).unwrap();
        let b = norm2(&invariant_covariance_bias(&model).unwrap());
        assert!(b > prev);
        prev = b;
    }
}

#[test]
fn modified_equation_of_exact_chain_is_the_sde() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, -0.3, 0.8]);
    let dt = 0.2;
    let b = expm(&(-&a * dt));
    let l = nrlangevin_core::linalg::integrated_covariance(&-&a, &DMatrix::identity(2, 2), dt).unwrap();
    let sde = modified_coefficients(&OneStepAffine { b, l }, dt).unwrap();
    assert!((&sde.b_tilde + &a).amax() < 1e-9);
    assert!((&sde.sigma_tilde - DMatrix::identity(2, 2)).amax() < 1e-9);
}

#[test]
fn modified_equation_of_identity_map() {
    let dt = 1e-8;
    let l = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]) * dt;
    let sde = modified_coefficients(&OneStepAffine { b: DMatrix::identity(2, 2), l: l.clone() }, dt).unwrap();
    assert!(sde.b_tilde.amax() < 1e-12);
    assert!((&sde.sigma_tilde - &l / dt).amax() < 1e-9);
}

#[test]
fn modified_drift_of_euler_chain_is_first_order() {
    let a = DMatrix::identity(2, 2) * 1.5;
    let j = make_rotation_2d();
    let beta = 0.7;
    let drift = (DMatrix::identity(2, 2) - j.matrix() * beta) * &a;
    let err = |dt: f64| {
        let b = DMatrix::identity(2, 2) - &drift * dt;
        let sde = modified_coefficients(&OneStepAffine { b, l: DMatrix::identity(2, 2) * dt }, dt).unwrap();
        (sde.b_tilde + &drift).norm()
    };
    let slope = (err(1e-2) / err(1e-3)).log10();
    assert!((slope - 1.0).abs() < 0.05, "{slope}");
}

#[test]
fn log_round_trip_on_scheme_matrices() {
    for &mode in &MODES {
        for &ordering in &ORDERINGS {
            let model = LinearModel::isotropic(1.0, 3.0, 0.1, 2, mode, ordering).unwrap();
            let b = one_step_matrices(&model).unwrap().b;
            let l = principal_log(&b).unwrap();
            assert!((expm(&l) - &b).norm() <= 1e-10 * b.norm());
        }
    }
}

#[test]
fn route_equivalence() {
    for &mode in &MODES {
        for &ordering in &ORDERINGS {
            for p in [1, 2] {
                for beta in [0.5, 1.0, 2.0] {
                    for dt in [0.05, 0.1, 0.2] {
                        let model = LinearModel::isotropic(1.0, beta, dt, p, mode, ordering).unwrap();
                        let affine = one_step_matrices(&model).unwrap();
                        let k = numerical_invariant_covariance(&affine).unwrap();
                        let k2 = stationary_covariance(&modified_coefficients(&affine, dt).unwrap()).unwrap();
                        assert!((&k - &k2).amax() < 1e-9);
                    }
                }
            }
        }
    }
}

fn leading(alpha: f64, beta: f64) -> f64 {
    (2.0 + beta * beta) / (2.0 * alpha * (1.0 + beta * beta))
}

#[test]
fn published_convention_leading_term() {
    for (alpha, beta) in [(1.0, 0.0), (1.0, 1.0), (2.0, 3.0), (0.5, 0.3)] {
        let a = (DMatrix::identity(2, 2) - make_rotation_2d().matrix() * beta) * alpha;
        let v = asymptotic_variance_quadratic(
            &a,
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            VarianceConvention::Published,
        )
        .unwrap();
        assert_relative_eq!(v, leading(alpha, beta), max_relative = 1e-12);
    }
}

#[test]
fn green_kubo_is_flow_invariant_for_rotation_invariant_observable() {
    for beta in [0.0, 1.0, 5.0] {
        let a = (DMatrix::identity(2, 2) - make_rotation_2d().matrix() * beta) * 1.0;
        let v = asymptotic_variance_quadratic(
            &a,
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            VarianceConvention::GreenKubo,
        )
        .unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-12);
    }
}

#[test]
fn zero_observable_has_zero_variance() {
    let a = DMatrix::identity(2, 2);
    for conv in [VarianceConvention::GreenKubo, VarianceConvention::Published] {
        let v = asymptotic_variance_quadratic(&a, &a, &DMatrix::zeros(2, 2), &DVector::zeros(2), conv).unwrap();
        assert_eq!(v, 0.0);
    }
}

#[test]
fn continuous_and_discrete_variance_agree_as_dt_shrinks() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
    let l = DVector::from_vec(vec![0.3, -0.7]);
    let model = LinearModel::isotropic(1.0, 1.5, 1e-3, 4, ReversibleMode::Exact, Ordering::NonreversibleFirst).unwrap();
    let cont = numerical_asymptotic_variance(&model, &m, &l, VarianceConvention::GreenKubo).unwrap();
    let disc = discrete_asymptotic_variance(&one_step_matrices(&model).unwrap(), model.dt, &m, &l).unwrap();
    assert_relative_eq!(cont, disc, max_relative = 1e-5);
}

#[test]
fn mse_model_without_bias() {
    assert_eq!(mse_model(0.0, 2.0, 4.0).unwrap(), 0.5);
    assert_eq!(mse_model(1.0, 2.0, 4.0).unwrap(), 1.5);
    assert!(mse_model(0.0, 1.0, 0.0).is_err());
}

#[test]
fn unstable_drift_is_rejected() {
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
    assert!(LinearModel::new(a, make_rotation_2d(), 1.0, 0.1, 1, ReversibleMode::Exact, Ordering::NonreversibleFirst).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stein_residual_is_small(entries in prop::collection::vec(-0.3f64..0.3, 9), c in prop::collection::vec(-1.0f64..1.0, 6)) {
        let b = DMatrix::from_row_slice(3, 3, &entries);
        let c = DMatrix::from_row_slice(3, 3, &[c[0], c[1], c[2], c[1], c[3], c[4], c[2], c[4], c[5]]);
        let x = solve_stein(&b, &c).unwrap();
        let resid = &b * &x * b.transpose() - &x - &c;
        prop_assert!(resid.norm() <= 1e-10 * c.norm().max(1e-300));
    }

    #[test]
    fn lyapunov_residual_is_small(entries in prop::collection::vec(-0.5f64..0.5, 9), shift in 1.6f64..3.0) {
        let a = DMatrix::from_row_slice(3, 3, &entries) + DMatrix::identity(3, 3) * shift;
        let q = DMatrix::identity(3, 3);
        let x = solve_lyapunov_continuous(&a, &q).unwrap();
        let resid = &a * &x + &x * a.transpose() - &q;
        prop_assert!(resid.norm() <= 1e-10 * q.norm());
    }

    #[test]
    fn log_exp_round_trip(entries in prop::collection::vec(-1.0f64..1.0, 9)) {
        let a = DMatrix::from_row_slice(3, 3, &entries);
        let b = expm(&a);
        let l = principal_log(&b).unwrap();
        prop_assert!((expm(&l) - &b).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn stationary_covariance_is_symmetric_positive(beta in 0.0f64..3.0, dt in 0.01f64..0.3, p in 1usize..4) {
        let model = LinearModel::isotropic(1.0, beta, dt, p, ReversibleMode::Exact, Ordering::ReversibleFirst).unwrap();
        if let Ok(k) = numerical_invariant_covariance(&one_step_matrices(&model).unwrap()) {
            prop_assert!((&k - k.transpose()).amax() < 1e-14);
            prop_assert!(k.clone().cholesky().is_some());
        }
    }
}
