//! Exact bias and variance analysis of splitting schemes on linear SDEs
//! dX = −(I − βJ)AX dt + dW.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{make_rotation_2d, NonreversibleFlow, SkewMatrix};
use crate::kernels::{NoiseConvention, ReversibleKernel};
use crate::linalg::{self, integrated_covariance, integrated_covariance_inverse, sqrt_spd, taylor_exp, taylor_exp_tail};
use crate::ode::FlowIntegrator;
use crate::splitting::{Ordering, SplittingConfig};
use crate::targets::GaussianTarget;

pub use crate::linalg::{solve_lyapunov_continuous, solve_stein};

/// How the reversible part of a linear splitting step is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReversibleMode {
    /// Exact Ornstein–Uhlenbeck transition.
    Exact,
    /// Implicit midpoint (θ = 1/2) step.
    ThetaHalf,
}

/// Linear model: drift A, skew J, flow strength β, step Δt, flow Taylor
/// order p, reversible integrator and step ordering.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub j: SkewMatrix,
    pub beta: f64,
    pub dt: f64,
    pub p: usize,
    pub mode: ReversibleMode,
    pub ordering: Ordering,
}

/// X_{n+1} = B X_n + f_n with E[f fᵀ] = L.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepAffine {
    pub b: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

/// dX̃ = B̃ X̃ dt + Σ̃^{1/2} dW, matching the chain exactly at step times.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedSDE {
    pub b_tilde: DMatrix<f64>,
    pub sigma_tilde: DMatrix<f64>,
}

/// Normalization of the asymptotic variance of a quadratic observable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// lim T·Var of the time average, i.e. 2∫₀^∞ Cov(f(X₀), f(X_t)) dt.
    #[default]
    GreenKubo,
    /// ½ Tr[(Π_T + Π_N) Σ^{1/2} M Σ^{1/2}] with AᵀΠ_T + Π_T A = M and
    /// AΠ_N + Π_N A = M; reproduces the published small-Δt expansions.
    /// Quadratic observables only.
    Published,
}

fn check_stable(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::param("drift matrix must be square and non-empty"));
    }
    if let Some(z) = linalg::eigenvalues(a).into_iter().find(|z| z.re <= 0.0) {
        return Err(Error::Unstable(format!("drift has eigenvalue {z} with non-positive real part")));
    }
    Ok(())
}

impl LinearModel {
    pub fn new(
        a: DMatrix<f64>,
        j: SkewMatrix,
        beta: f64,
        dt: f64,
        p: usize,
        mode: ReversibleMode,
        ordering: Ordering,
    ) -> Result<Self> {
        check_stable(&a)?;
        if j.dim() != a.nrows() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: j.dim() });
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt must be positive"));
        }
        if p == 0 {
            return Err(Error::param("Taylor order p must be at least 1"));
        }
        if !beta.is_finite() {
            return Err(Error::param("beta must be finite"));
        }
        Ok(Self { a, j, beta, dt, p, mode, ordering })
    }

    /// Two-dimensional model with A = αI and J the rotation generator.
    pub fn isotropic(alpha: f64, beta: f64, dt: f64, p: usize, mode: ReversibleMode, ordering: Ordering) -> Result<Self> {
        Self::new(DMatrix::identity(2, 2) * alpha, make_rotation_2d(), beta, dt, p, mode, ordering)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// G = βJA, the generator of the linear flow.
    pub fn flow_generator(&self) -> DMatrix<f64> {
        self.j.matrix() * &self.a * self.beta
    }

    /// Σ∞ solving AΣ + ΣAᵀ = I.
    pub fn sigma_inf(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        solve_lyapunov_continuous(&self.a, &DMatrix::identity(d, d))
    }

    /// (R, S): deterministic part and noise covariance of the reversible step.
    pub fn reversible_parts(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let d = self.dim();
        let id = DMatrix::<f64>::identity(d, d);
        let h = self.dt;
        match self.mode {
            ReversibleMode::Exact => {
                let r = linalg::expm(&(-&self.a * h));
                let s = if d <= 16 {
                    integrated_covariance(&-&self.a, &id, h)?
                } else {
                    let sig = self.sigma_inf()?;
                    &sig - &r * &sig * r.transpose()
                };
                Ok((r, s))
            }
            ReversibleMode::ThetaHalf => {
                let inv = (&id + &self.a * (h / 2.0))
                    .try_inverse()
                    .ok_or_else(|| Error::Singular("I + dt·A/2 is singular".into()))?;
                let r = &inv * (&id - &self.a * (h / 2.0));
                let s = &inv * inv.transpose() * h;
                Ok((r, s))
            }
        }
    }

    /// Sampler realizing this model with a Gaussian target. Requires
    /// symmetric A, so that βJAz is a multiple of J∇log π for π = N(0, (2A)⁻¹).
    pub fn sampler(&self) -> Result<SplittingConfig> {
        let scale = self.a.amax().max(1.0);
        if (&self.a - self.a.transpose()).amax() > 1e-12 * scale {
            return Err(Error::param("sampling a linear model needs a symmetric drift matrix"));
        }
        let target = Arc::new(GaussianTarget::new(&self.a * 2.0)?);
        let flow = NonreversibleFlow::log_grad(self.j.negated(), self.beta / 2.0, target)?;
        let kernel = match self.mode {
            ReversibleMode::Exact => ReversibleKernel::exact_ou(self.a.clone(), NoiseConvention::UnitDiffusion)?,
            ReversibleMode::ThetaHalf => ReversibleKernel::theta_half(self.a.clone(), NoiseConvention::UnitDiffusion)?,
        };
        SplittingConfig::new(self.dt, self.ordering, kernel, FlowIntegrator::taylor(self.p), flow)
    }
}

/// (B, L) of the composed scheme.
pub fn one_step_matrices(model: &LinearModel) -> Result<OneStepAffine> {
    let (r, s) = model.reversible_parts()?;
    let t = taylor_exp(&(model.flow_generator() * model.dt), model.p);
    Ok(match model.ordering {
        Ordering::NonreversibleFirst => OneStepAffine { b: &r * &t, l: s },
        Ordering::ReversibleFirst => OneStepAffine { b: &t * &r, l: &t * s * t.transpose() },
    })
}

fn check_contractive(b: &DMatrix<f64>) -> Result<()> {
    let rho = linalg::spectral_radius(b);
    if rho >= 1.0 {
        return Err(Error::Unstable(format!("spectral radius of B is {rho} >= 1")));
    }
    Ok(())
}

/// Stationary covariance K = B K Bᵀ + L of the chain.
pub fn numerical_invariant_covariance(affine: &OneStepAffine) -> Result<DMatrix<f64>> {
    check_contractive(&affine.b)?;
    solve_stein(&affine.b, &(-&affine.l))
}

/// K − Σ∞ computed without forming K, so that biases far below the size of
/// Σ∞ keep their relative accuracy.
///
/// Both reversible integrators leave N(0, Σ∞) exactly invariant, so the
/// residual BΣ∞Bᵀ + L − Σ∞ comes only from the flow, where it is assembled
/// from the truncated exponential tail.
pub fn invariant_covariance_bias(model: &LinearModel) -> Result<DMatrix<f64>> {
    let affine = one_step_matrices(model)?;
    check_contractive(&affine.b)?;
    let (r, _) = model.reversible_parts()?;
    let sigma = model.sigma_inf()?;
    let h = model.dt;
    let g = model.flow_generator();
    let hg = &g * h;
    let exact = linalg::expm(&hg);
    let tail = taylor_exp_tail(&hg, model.p);
    let w = &g * &sigma + &sigma * g.transpose();
    let drift = integrated_covariance(&g, &w, h)?;
    let cross = &tail * &sigma * exact.transpose();
    let flow_residual = drift - &cross - cross.transpose() + &tail * &sigma * tail.transpose();
    let residual = match model.ordering {
        Ordering::NonreversibleFirst => &r * flow_residual * r.transpose(),
        Ordering::ReversibleFirst => flow_residual,
    };
    solve_stein(&affine.b, &(-residual))
}

/// Exact modified equation of a linear chain.
pub fn modified_coefficients(affine: &OneStepAffine, dt: f64) -> Result<ModifiedSDE> {
    if !(dt > 0.0) {
        return Err(Error::param("dt must be positive"));
    }
    let log_b = linalg::principal_log(&affine.b)?;
    let b_tilde = log_b / dt;
    let back = linalg::expm(&(&b_tilde * dt));
    let b_norm = affine.b.norm().max(f64::MIN_POSITIVE);
    if (&back - &affine.b).norm() > 1e-10 * b_norm {
        return Err(Error::LogUndefined("matrix logarithm failed its round-trip check".into()));
    }
    let d = affine.b.nrows();
    let sigma_tilde = if d <= 16 {
        integrated_covariance_inverse(&b_tilde, &affine.l, dt)?
    } else {
        let rhs = &b_tilde * &affine.l + &affine.l * b_tilde.transpose();
        solve_stein(&affine.b, &rhs)?
    };
    Ok(ModifiedSDE { b_tilde, sigma_tilde })
}

/// Stationary covariance of the modified SDE: B̃K + KB̃ᵀ = −Σ̃.
pub fn stationary_covariance(sde: &ModifiedSDE) -> Result<DMatrix<f64>> {
    check_stable(&-&sde.b_tilde)?;
    solve_lyapunov_continuous(&sde.b_tilde, &(-&sde.sigma_tilde))
}

/// Asymptotic variance of f(x) = x·Mx + Lvec·x for dX = −AX dt + Σ^{1/2} dW.
pub fn asymptotic_variance_quadratic(
    a: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    m: &DMatrix<f64>,
    lvec: &DVector<f64>,
    convention: VarianceConvention,
) -> Result<f64> {
    check_stable(a)?;
    let d = a.nrows();
    if sigma.shape() != (d, d) || m.shape() != (d, d) || lvec.len() != d {
        return Err(Error::param(format!("Sigma and M must be {d}x{d} and Lvec of length {d}")));
    }
    let pi_t = linalg::solve_sylvester(&a.transpose(), a, m)?;
    match convention {
        VarianceConvention::GreenKubo => {
            let k = solve_lyapunov_continuous(a, sigma)?;
            let quad = 4.0 * (&k * m * &k * &pi_t).trace();
            let lin = if lvec.iter().all(|&v| v == 0.0) {
                0.0
            } else {
                let a_inv = a.clone().try_inverse().ok_or_else(|| Error::Singular("A is singular".into()))?;
                2.0 * lvec.dot(&(a_inv * &k * lvec))
            };
            Ok(quad + lin)
        }
        VarianceConvention::Published => {
            if lvec.iter().any(|&v| v != 0.0) {
                return Err(Error::param("the published convention covers quadratic observables only"));
            }
            let pi_n = linalg::solve_sylvester(a, a, m)?;
            let root = sqrt_spd(sigma)?;
            let m_sigma = &root * m * &root;
            Ok(0.5 * ((pi_t + pi_n) * m_sigma).trace())
        }
    }
}

/// Asymptotic variance of the chain's ergodic average, through its exact
/// modified equation.
pub fn numerical_asymptotic_variance(
    model: &LinearModel,
    m: &DMatrix<f64>,
    lvec: &DVector<f64>,
    convention: VarianceConvention,
) -> Result<f64> {
    let affine = one_step_matrices(model)?;
    check_contractive(&affine.b)?;
    let sde = modified_coefficients(&affine, model.dt)?;
    asymptotic_variance_quadratic(&-&sde.b_tilde, &sde.sigma_tilde, m, lvec, convention)
}

/// Δt·lim N·Var of the chain's ergodic average, summed directly over the
/// chain's autocovariances.
pub fn discrete_asymptotic_variance(
    affine: &OneStepAffine,
    dt: f64,
    m: &DMatrix<f64>,
    lvec: &DVector<f64>,
) -> Result<f64> {
    let k = numerical_invariant_covariance(affine)?;
    let b = &affine.b;
    let d = b.nrows();
    let kmk = &k * m * &k;
    let y0 = solve_stein(b, &(-&kmk))?;
    let quad_var = 2.0 * (m * &kmk).trace();
    let quad_lag = 2.0 * (m * (&y0 - &kmk)).trace();
    let id = DMatrix::<f64>::identity(d, d);
    let resolvent = (&id - b).try_inverse().ok_or_else(|| Error::Singular("I − B is singular".into()))?;
    let lin_var = lvec.dot(&(&k * lvec));
    let lin_lag = lvec.dot(&(b * resolvent * &k * lvec));
    Ok(dt * (quad_var + lin_var + 2.0 * (quad_lag + lin_lag)))
}

/// bias² + asym_var / T.
pub fn mse_model(bias: f64, asym_var: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::param("T must be positive"));
    }
    Ok(bias * bias + asym_var / t)
}
