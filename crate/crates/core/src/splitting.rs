//! Lie–Trotter composition of a reversible kernel and a nonreversible flow.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flows::NonreversibleFlow;
use crate::kernels::{ChainState, KernelKind, KernelStepRecord, PreparedKernel, ReversibleKernel};
use crate::ode::{flow_step, FlowIntegrator};

/// Order of the two sub-steps within one sampler step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// Kernel, then flow.
    ReversibleFirst,
    /// Flow, then kernel: X_{n+1} = Θ(Φ(X_n)).
    #[default]
    NonreversibleFirst,
}

/// A fully specified splitting sampler.
#[derive(Debug, Clone)]
pub struct SplittingConfig {
    pub dt: f64,
    pub ordering: Ordering,
    pub kernel: ReversibleKernel,
    pub integrator: FlowIntegrator,
    /// Carries β; β = 0 switches the flow off.
    pub flow: NonreversibleFlow,
}

/// Evaluation counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub density: u64,
    pub gradient: u64,
}

impl Budget {
    fn add(&mut self, density: u64, gradient: u64) {
        self.density += density;
        self.gradient += gradient;
    }
}

impl std::ops::Add for Budget {
    type Output = Budget;
    fn add(self, o: Budget) -> Budget {
        Budget { density: self.density + o.density, gradient: self.gradient + o.gradient }
    }
}

impl SplittingConfig {
    pub fn new(
        dt: f64,
        ordering: Ordering,
        kernel: ReversibleKernel,
        integrator: FlowIntegrator,
        flow: NonreversibleFlow,
    ) -> Result<Self> {
        let cfg = Self { dt, ordering, kernel, integrator, flow };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param(format!("dt must be positive, got {}", self.dt)));
        }
        self.integrator.validate()?;
        check_dim(self.kernel.dim(), self.flow.dim())
    }

    pub fn beta(&self) -> f64 {
        self.flow.beta()
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { flow: self.flow.with_beta(beta), ..self.clone() }
    }

    pub fn with_dt(&self, dt: f64) -> Self {
        Self { dt, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn flow_active(&self) -> bool {
        self.flow.beta() != 0.0
    }

    /// Evaluations charged per step once the chain is running.
    pub fn cost_per_step(&self) -> Budget {
        let mut b = Budget::default();
        let kind = self.kernel.kind();
        if self.flow_active() {
            let (d, g) = self.integrator.cost(&self.flow);
            b.add(d, g);
        }
        let (d, g) = match kind {
            KernelKind::Mala | KernelKind::MalaBarker => (1, 1),
            KernelKind::Rwmh => (1, 0),
            KernelKind::ExactOu | KernelKind::ThetaHalf => (0, 0),
        };
        b.add(d, g);
        if self.flow_active() {
            // the flow invalidates the cached evaluation at the current point
            b.add(d, g);
        }
        b
    }

    /// Largest step count whose density cost fits in `budget`.
    pub fn steps_for_budget(&self, budget: u64) -> Result<usize> {
        let c = self.cost_per_step();
        let unit = if c.density > 0 { c.density } else { c.gradient };
        if unit == 0 {
            return Err(Error::param("sampler uses no target evaluations; give a step count instead"));
        }
        Ok((budget / unit) as usize)
    }

    pub fn prepare(&self) -> Result<Splitter> {
        self.validate()?;
        Ok(Splitter { cfg: self.clone(), kernel: self.kernel.prepare(self.dt)? })
    }
}

/// A configuration with its step-size-dependent parts precomputed.
#[derive(Clone)]
pub struct Splitter {
    cfg: SplittingConfig,
    kernel: PreparedKernel,
}

impl Splitter {
    pub fn config(&self) -> &SplittingConfig {
        &self.cfg
    }

    fn flow(&self, state: &mut ChainState, rec: &mut KernelStepRecord) -> Result<()> {
        let cfg = &self.cfg;
        if !cfg.flow_active() {
            return Ok(());
        }
        let y = flow_step(&cfg.integrator, &cfg.flow, state.x(), cfg.dt)?;
        let (d, g) = cfg.integrator.cost(&cfg.flow);
        rec.n_density_evals += d;
        rec.n_grad_evals += g;
        state.set(y);
        Ok(())
    }

    /// One composed step; the record's counts include the flow's evaluations.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) -> Result<KernelStepRecord> {
        match self.cfg.ordering {
            Ordering::NonreversibleFirst => {
                let mut flow_rec = empty_record();
                self.flow(state, &mut flow_rec)?;
                let mut rec = self.kernel.step(state, rng)?;
                rec.n_density_evals += flow_rec.n_density_evals;
                rec.n_grad_evals += flow_rec.n_grad_evals;
                Ok(rec)
            }
            Ordering::ReversibleFirst => {
                let mut rec = self.kernel.step(state, rng)?;
                self.flow(state, &mut rec)?;
                Ok(rec)
            }
        }
    }

    /// Initial chain state. The current point is pre-evaluated (uncharged)
    /// only when the flow is off, so that every step costs the same.
    pub fn initial_state(&self, x0: DVector<f64>) -> Result<ChainState> {
        check_dim(self.cfg.dim(), x0.len())?;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("initial point must be finite"));
        }
        match self.cfg.kernel.target() {
            Some(t) if !self.cfg.flow_active() => ChainState::evaluated(t.as_ref(), x0),
            _ => Ok(ChainState::new(x0)),
        }
    }
}

fn empty_record() -> KernelStepRecord {
    KernelStepRecord {
        proposal: DVector::zeros(0),
        accepted: true,
        log_accept_ratio: 0.0,
        n_density_evals: 0,
        n_grad_evals: 0,
    }
}

/// One sampler step from `x`; evaluations at `x` are not charged.
pub fn lie_trotter_step<R: Rng + ?Sized>(
    cfg: &SplittingConfig,
    x: &DVector<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, KernelStepRecord)> {
    let splitter = cfg.prepare()?;
    let mut state = match (cfg.kernel.target(), cfg.ordering) {
        (Some(t), Ordering::ReversibleFirst) => ChainState::evaluated(t.as_ref(), x.clone())?,
        _ => splitter.initial_state(x.clone())?,
    };
    let rec = splitter.step(&mut state, rng)?;
    Ok((state.into_x(), rec))
}

/// Scalar function of the state recorded along a chain.
pub type Observable = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

pub mod observables {
    use super::*;

    pub fn coordinate(i: usize) -> Observable {
        Arc::new(move |x: &DVector<f64>| x[i])
    }

    pub fn squared_coordinate(i: usize) -> Observable {
        Arc::new(move |x: &DVector<f64>| x[i] * x[i])
    }

    pub fn squared_norm() -> Observable {
        Arc::new(|x: &DVector<f64>| x.norm_squared())
    }

    pub fn constant(c: f64) -> Observable {
        Arc::new(move |_: &DVector<f64>| c)
    }
}

/// Streaming first and second moments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&self, o: &Moments) -> Moments {
        Moments { n: self.n + o.n, sum: self.sum + o.sum, sum_sq: self.sum_sq + o.sum_sq }
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.n as f64 - m * m).max(0.0)
    }
}

/// What to keep from a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub store_series: bool,
    pub store_samples: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { store_series: true, store_samples: false }
    }
}

/// Output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub seed: u64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_completed: usize,
    pub accepted_count: u64,
    pub budget: Budget,
    pub moments: Vec<Moments>,
    /// Per observable, values at X_0..X_{N−1}; empty when not stored.
    pub series: Vec<Vec<f64>>,
    pub samples: Option<Vec<DVector<f64>>>,
    pub final_state: DVector<f64>,
    pub failure: Option<String>,
}

impl ChainResult {
    pub fn is_valid(&self) -> bool {
        self.failure.is_none()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.n_completed == 0 {
            0.0
        } else {
            self.accepted_count as f64 / self.n_completed as f64
        }
    }

    /// Ergodic average of observable `i`.
    pub fn average(&self, i: usize) -> f64 {
        self.moments[i].mean()
    }
}

/// Runs `n_steps` sampler steps from `x0`, recording the observables at
/// X_0..X_{N−1}. A numerical failure stops the chain and is reported in
/// `failure`; other errors are returned.
pub fn run_chain(
    cfg: &SplittingConfig,
    x0: &DVector<f64>,
    n_steps: usize,
    observables: &[Observable],
    seed: u64,
) -> Result<ChainResult> {
    run_chain_with(cfg, x0, n_steps, observables, seed, RunOptions::default())
}

pub fn run_chain_with(
    cfg: &SplittingConfig,
    x0: &DVector<f64>,
    n_steps: usize,
    observables: &[Observable],
    seed: u64,
    opts: RunOptions,
) -> Result<ChainResult> {
    if n_steps == 0 {
        return Err(Error::param("n_steps must be at least 1"));
    }
    let splitter = cfg.prepare()?;
    let mut state = splitter.initial_state(x0.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = observables.len();
    let mut moments = vec![Moments::default(); k];
    let mut series = if opts.store_series { vec![Vec::with_capacity(n_steps); k] } else { vec![Vec::new(); k] };
    let mut samples = opts.store_samples.then(|| Vec::with_capacity(n_steps));
    let mut budget = Budget::default();
    let mut accepted = 0;
    let mut failure = None;
    let mut completed = 0;
    for _ in 0..n_steps {
        for (j, f) in observables.iter().enumerate() {
            let v = f(state.x());
            moments[j].push(v);
            if opts.store_series {
                series[j].push(v);
            }
        }
        if let Some(s) = samples.as_mut() {
            s.push(state.x().clone());
        }
        match splitter.step(&mut state, &mut rng) {
            Ok(rec) => {
                budget.add(rec.n_density_evals, rec.n_grad_evals);
                accepted += rec.accepted as u64;
                completed += 1;
            }
            Err(e) if e.is_numerical() => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ChainResult {
        seed,
        dt: cfg.dt,
        n_steps,
        n_completed: completed,
        accepted_count: accepted,
        budget,
        moments,
        series,
        samples,
        final_state: state.into_x(),
        failure,
    })
}

/// Independent chains from the same start, one per seed, run in parallel.
pub fn run_replicas(
    cfg: &SplittingConfig,
    x0: &DVector<f64>,
    n_steps: usize,
    observables: &[Observable],
    seeds: &[u64],
    opts: RunOptions,
) -> Result<Vec<ChainResult>> {
    seeds
        .par_iter()
        .map(|&s| run_chain_with(cfg, x0, n_steps, observables, s, opts))
        .collect()
}

/// Seed for replica `replica` at sweep point `grid`, mixed with SplitMix64.
pub fn derive_seed(base: u64, grid: u64, replica: u64) -> u64 {
    let mut z = base
        .wrapping_add(grid.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(replica.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Heuristic largest β for bias tolerance `epsilon` at step `dt` with a flow
/// integrator of order `r`: dt^{−κ}, κ = −(log ε / log dt)/(r+1) + r/(r+1).
pub fn recommend_beta(epsilon: f64, dt: f64, r: usize) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::param("epsilon must be positive"));
    }
    if !(dt > 0.0 && dt < 1.0) {
        return Err(Error::param(format!("dt must lie in (0, 1), got {dt}")));
    }
    if r == 0 {
        return Err(Error::param("integrator order must be at least 1"));
    }
    let r = r as f64;
    let kappa = -(epsilon.ln() / dt.ln()) / (r + 1.0) + r / (r + 1.0);
    Ok(dt.powf(-kappa))
}
