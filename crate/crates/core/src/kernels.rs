//! π-invariant reversible kernels Θ_Δt.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::targets::TargetDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Mala,
    Rwmh,
    MalaBarker,
    ExactOu,
    ThetaHalf,
}

impl KernelKind {
    pub fn is_metropolized(self) -> bool {
        matches!(self, KernelKind::Mala | KernelKind::Rwmh | KernelKind::MalaBarker)
    }

    pub fn needs_gradient(self) -> bool {
        matches!(self, KernelKind::Mala | KernelKind::MalaBarker)
    }
}

/// Diffusion coefficient of the linear SDE dX = −AX dt + D^{1/2} dW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseConvention {
    /// D = I.
    UnitDiffusion,
    /// D = 2I, as in dX = ∇log π dt + √2 dW.
    Sqrt2Diffusion,
}

impl NoiseConvention {
    pub fn factor(self) -> f64 {
        match self {
            NoiseConvention::UnitDiffusion => 1.0,
            NoiseConvention::Sqrt2Diffusion => 2.0,
        }
    }
}

#[derive(Clone)]
enum Backend {
    Target(Arc<dyn TargetDistribution>),
    Linear { a: DMatrix<f64>, noise: NoiseConvention },
}

/// A reversible kernel, not yet tied to a step size.
#[derive(Clone)]
pub struct ReversibleKernel {
    kind: KernelKind,
    backend: Backend,
}

impl std::fmt::Debug for ReversibleKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReversibleKernel").field("kind", &self.kind).finish()
    }
}

/// Outcome of one kernel step.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelStepRecord {
    pub proposal: DVector<f64>,
    pub accepted: bool,
    pub log_accept_ratio: f64,
    pub n_density_evals: u64,
    pub n_grad_evals: u64,
}

/// Chain position together with cached target evaluations at it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    x: DVector<f64>,
    log_density: Option<f64>,
    grad: Option<DVector<f64>>,
}

impl ChainState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x, log_density: None, grad: None }
    }

    /// State with log-density and gradient already evaluated.
    pub fn evaluated(target: &dyn TargetDistribution, x: DVector<f64>) -> Result<Self> {
        let (l, g) = target.value_and_grad(&x)?;
        Ok(Self { x, log_density: Some(l), grad: Some(g) })
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn into_x(self) -> DVector<f64> {
        self.x
    }

    /// Moves to a new position, discarding the cache.
    pub fn set(&mut self, x: DVector<f64>) {
        self.x = x;
        self.log_density = None;
        self.grad = None;
    }

    fn ensure(&mut self, target: &dyn TargetDistribution, need_grad: bool, rec: &mut KernelStepRecord) {
        match (self.log_density.is_some(), self.grad.is_some() || !need_grad) {
            (true, true) => {}
            (false, _) if need_grad => {
                let (l, g) = target.value_and_grad_unchecked(&self.x);
                self.log_density = Some(l);
                self.grad = Some(g);
                rec.n_density_evals += 1;
                rec.n_grad_evals += 1;
            }
            (false, _) => {
                self.log_density = Some(target.log_density_unchecked(&self.x));
                rec.n_density_evals += 1;
            }
            (true, false) => {
                self.grad = Some(target.grad_log_density_unchecked(&self.x));
                rec.n_grad_evals += 1;
            }
        }
    }
}

impl ReversibleKernel {
    pub fn mala(target: Arc<dyn TargetDistribution>) -> Self {
        Self { kind: KernelKind::Mala, backend: Backend::Target(target) }
    }

    pub fn rwmh(target: Arc<dyn TargetDistribution>) -> Self {
        Self { kind: KernelKind::Rwmh, backend: Backend::Target(target) }
    }

    pub fn mala_barker(target: Arc<dyn TargetDistribution>) -> Self {
        Self { kind: KernelKind::MalaBarker, backend: Backend::Target(target) }
    }

    /// Metropolized kernel of the given kind.
    pub fn metropolized(kind: KernelKind, target: Arc<dyn TargetDistribution>) -> Result<Self> {
        if !kind.is_metropolized() {
            return Err(Error::param(format!("{kind:?} is not a Metropolized kernel")));
        }
        Ok(Self { kind, backend: Backend::Target(target) })
    }

    /// Exact transition of dX = −AX dt + D^{1/2} dW; A must be stable.
    pub fn exact_ou(a: DMatrix<f64>, noise: NoiseConvention) -> Result<Self> {
        check_stable(&a)?;
        Ok(Self { kind: KernelKind::ExactOu, backend: Backend::Linear { a, noise } })
    }

    /// Implicit midpoint (θ = 1/2) step for the same linear SDE.
    pub fn theta_half(a: DMatrix<f64>, noise: NoiseConvention) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::param("drift matrix must be square"));
        }
        Ok(Self { kind: KernelKind::ThetaHalf, backend: Backend::Linear { a, noise } })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.backend {
            Backend::Target(t) => t.dim(),
            Backend::Linear { a, .. } => a.nrows(),
        }
    }

    pub fn target(&self) -> Option<&Arc<dyn TargetDistribution>> {
        match &self.backend {
            Backend::Target(t) => Some(t),
            Backend::Linear { .. } => None,
        }
    }

    /// Precomputes everything that depends on the step size.
    pub fn prepare(&self, dt: f64) -> Result<PreparedKernel> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt must be positive"));
        }
        let linear = match &self.backend {
            Backend::Target(_) => None,
            Backend::Linear { a, noise } => Some(match self.kind {
                KernelKind::ExactOu => exact_ou_matrices(a, noise.factor(), dt)?,
                _ => theta_matrices(a, noise.factor(), dt)?,
            }),
        };
        Ok(PreparedKernel { kernel: self.clone(), dt, linear })
    }
}

fn check_stable(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::param("drift matrix must be square"));
    }
    if let Some(z) = linalg::eigenvalues(a).into_iter().find(|z| z.re <= 0.0) {
        return Err(Error::Unstable(format!("drift matrix has eigenvalue {z} with non-positive real part")));
    }
    Ok(())
}

/// y = m x + n ξ.
#[derive(Debug, Clone)]
struct LinearStep {
    m: DMatrix<f64>,
    n: DMatrix<f64>,
}

fn scalar_multiple_of_identity(a: &DMatrix<f64>) -> Option<f64> {
    let alpha = a[(0, 0)];
    let id = DMatrix::<f64>::identity(a.nrows(), a.ncols()) * alpha;
    (a == &id).then_some(alpha)
}

fn exact_ou_matrices(a: &DMatrix<f64>, noise: f64, dt: f64) -> Result<LinearStep> {
    let d = a.nrows();
    if let Some(alpha) = scalar_multiple_of_identity(a) {
        let m = DMatrix::identity(d, d) * (-alpha * dt).exp();
        let var = noise * -(-2.0 * alpha * dt).exp_m1() / (2.0 * alpha);
        return Ok(LinearStep { m, n: DMatrix::identity(d, d) * var.sqrt() });
    }
    let m = linalg::expm(&(-a * dt));
    let cov = linalg::integrated_covariance(&-a, &(DMatrix::identity(d, d) * noise), dt)?;
    let n = cov
        .cholesky()
        .ok_or_else(|| Error::Singular("one-step covariance is not positive definite".into()))?
        .l();
    Ok(LinearStep { m, n })
}

fn theta_matrices(a: &DMatrix<f64>, noise: f64, dt: f64) -> Result<LinearStep> {
    let d = a.nrows();
    let id = DMatrix::<f64>::identity(d, d);
    let implicit = (&id + a * (dt / 2.0))
        .try_inverse()
        .ok_or_else(|| Error::Singular("I + dt·A/2 is singular".into()))?;
    let m = &implicit * (&id - a * (dt / 2.0));
    let n = implicit * (noise * dt).sqrt();
    Ok(LinearStep { m, n })
}

/// A kernel bound to a step size.
#[derive(Clone)]
pub struct PreparedKernel {
    kernel: ReversibleKernel,
    dt: f64,
    linear: Option<LinearStep>,
}

fn standard_normal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

fn log_acceptance(kind: KernelKind, log_ratio: f64) -> f64 {
    match kind {
        KernelKind::MalaBarker => {
            // log(r / (1 + r)) = −log(1 + 1/r)
            let z = -log_ratio;
            -(if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() })
        }
        _ => log_ratio.min(0.0),
    }
}

impl PreparedKernel {
    pub fn kind(&self) -> KernelKind {
        self.kernel.kind
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Deterministic part and noise factor of a linear kernel.
    pub fn linear_matrices(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        self.linear.as_ref().map(|l| (&l.m, &l.n))
    }

    /// Advances `state` by one step, updating its cache.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<KernelStepRecord> {
        check_dim(self.dim(), state.x.len())?;
        if let Some(lin) = &self.linear {
            let xi = standard_normal(state.x.len(), rng);
            let y = &lin.m * &state.x + &lin.n * xi;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("linear kernel produced a non-finite state".into()));
            }
            state.set(y.clone());
            return Ok(KernelStepRecord {
                proposal: y,
                accepted: true,
                log_accept_ratio: 0.0,
                n_density_evals: 0,
                n_grad_evals: 0,
            });
        }
        let target = self.kernel.target().expect("Metropolized kernels carry a target").as_ref();
        let kind = self.kernel.kind;
        let dt = self.dt;
        let mut rec = KernelStepRecord {
            proposal: DVector::zeros(0),
            accepted: false,
            log_accept_ratio: f64::NEG_INFINITY,
            n_density_evals: 0,
            n_grad_evals: 0,
        };
        state.ensure(target, kind.needs_gradient(), &mut rec);
        let lx = state.log_density.expect("cached");
        let xi = standard_normal(state.x.len(), rng);
        let noise = (2.0 * dt).sqrt();
        let (y, ly, gy, log_ratio) = if kind.needs_gradient() {
            let gx = state.grad.as_ref().expect("cached");
            let y = &state.x + gx * dt + xi * noise;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("MALA proposal is not finite".into()));
            }
            let (ly, gy) = target.value_and_grad_unchecked(&y);
            rec.n_density_evals += 1;
            rec.n_grad_evals += 1;
            let fwd = (&y - &state.x - gx * dt).norm_squared();
            let bwd = (&state.x - &y - &gy * dt).norm_squared();
            let log_ratio = ly - lx + (fwd - bwd) / (4.0 * dt);
            (y, ly, Some(gy), log_ratio)
        } else {
            let y = &state.x + xi * noise;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("random-walk proposal is not finite".into()));
            }
            let ly = target.log_density_unchecked(&y);
            rec.n_density_evals += 1;
            (y, ly, None, ly - lx)
        };
        if log_ratio.is_nan() {
            return Err(Error::NonFinite("acceptance ratio is NaN".into()));
        }
        let u: f64 = rng.random();
        let accept = u.ln() < log_acceptance(kind, log_ratio);
        rec.log_accept_ratio = log_ratio;
        rec.accepted = accept;
        if accept {
            state.x = y.clone();
            state.log_density = Some(ly);
            state.grad = gy;
        }
        rec.proposal = y;
        Ok(rec)
    }
}

/// One step of `k` from `x`, with the current point's evaluations not charged.
pub fn kernel_step<R: Rng + ?Sized>(
    k: &ReversibleKernel,
    x: &DVector<f64>,
    dt: f64,
    rng: &mut R,
) -> Result<(DVector<f64>, KernelStepRecord)> {
    let prepared = k.prepare(dt)?;
    let mut state = match k.target() {
        Some(t) => ChainState::evaluated(t.as_ref(), x.clone())?,
        None => ChainState::new(x.clone()),
    };
    let rec = prepared.step(&mut state, rng)?;
    Ok((state.into_x(), rec))
}

fn log_proposal(kind: KernelKind, target: &dyn TargetDistribution, from: &DVector<f64>, to: &DVector<f64>, dt: f64) -> f64 {
    let mean = if kind.needs_gradient() {
        from + target.grad_log_density_unchecked(from) * dt
    } else {
        from.clone()
    };
    -(to - mean).norm_squared() / (4.0 * dt)
}

/// |log[π̃(x) q(y|x) a(x,y)] − log[π̃(y) q(x|y) a(y,x)]| for a Metropolized kernel.
pub fn detailed_balance_residual(k: &ReversibleKernel, x: &DVector<f64>, y: &DVector<f64>, dt: f64) -> Result<f64> {
    let target = k
        .target()
        .ok_or_else(|| Error::param("detailed balance check needs a Metropolized kernel"))?
        .as_ref();
    check_dim(target.dim(), x.len())?;
    check_dim(target.dim(), y.len())?;
    let kind = k.kind();
    let (lx, ly) = (target.log_density_unchecked(x), target.log_density_unchecked(y));
    let qxy = log_proposal(kind, target, x, y, dt);
    let qyx = log_proposal(kind, target, y, x, dt);
    let r_xy = ly + qyx - lx - qxy;
    let forward = lx + qxy + log_acceptance(kind, r_xy);
    let backward = ly + qyx + log_acceptance(kind, -r_xy);
    Ok((forward - backward).abs())
}
