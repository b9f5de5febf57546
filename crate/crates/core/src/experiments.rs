//! Budget-matched sampler comparisons on the warped Gaussian, logistic
//! regression and log-Gaussian Cox targets.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    confidence_interval, default_batches, ess_of, mse_of_averages, MseDecomposition, ObservableSeries,
};
use crate::error::{Error, Result};
use crate::flows::{FlowKind, NonreversibleFlow, SkewMatrix};
use crate::kernels::{KernelKind, ReversibleKernel};
use crate::ode::FlowIntegrator;
use crate::splitting::{
    derive_seed, observables, run_chain_with, Budget, ChainResult, Observable, Ordering, RunOptions, SplittingConfig,
};
use crate::targets::TargetDistribution;

/// Nonreversible flow family, with ℓ_ref defaulting to ℓ at the start point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowSpec {
    #[default]
    LogGrad,
    Power { alpha: f64, ell_ref: Option<f64> },
    Compact { lo: f64, hi: f64, ell_ref: Option<f64> },
}

/// Everything about a sampler except Δt, β and J.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSpec {
    pub kernel: KernelKind,
    pub ordering: Ordering,
    pub integrator: FlowIntegrator,
    pub flow: FlowSpec,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Mala,
            ordering: Ordering::NonreversibleFirst,
            integrator: FlowIntegrator::rk4(1),
            flow: FlowSpec::LogGrad,
        }
    }
}

impl SamplerSpec {
    pub fn with_kernel(self, kernel: KernelKind) -> Self {
        Self { kernel, ..self }
    }

    pub fn build(
        &self,
        target: Arc<dyn TargetDistribution>,
        j: SkewMatrix,
        dt: f64,
        beta: f64,
        x0: &DVector<f64>,
    ) -> Result<SplittingConfig> {
        let kernel = ReversibleKernel::metropolized(self.kernel, target.clone())
            .map_err(|_| Error::param("general targets need a Metropolized kernel (mala, rwmh, mala_barker)"))?;
        let ell0 = || target.log_density(x0);
        let kind = match self.flow {
            FlowSpec::LogGrad => FlowKind::LogGrad,
            FlowSpec::Power { alpha, ell_ref } => FlowKind::Power { alpha, ell_ref: ell_ref.map_or_else(ell0, Ok)? },
            FlowSpec::Compact { lo, hi, ell_ref } => {
                FlowKind::Compact { lo, hi, ell_ref: ell_ref.map_or_else(ell0, Ok)? }
            }
        };
        let flow = NonreversibleFlow::new(kind, j, beta, target)?;
        SplittingConfig::new(dt, self.ordering, kernel, self.integrator, flow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub dt: f64,
    pub beta: f64,
}

/// Cartesian product of step sizes and flow strengths.
pub fn grid(dts: &[f64], betas: &[f64]) -> Vec<SweepPoint> {
    dts.iter()
        .flat_map(|&dt| betas.iter().map(move |&beta| SweepPoint { dt, beta }))
        .collect()
}

/// Local maximizer of log π by gradient ascent with Barzilai–Borwein steps
/// and backtracking.
pub fn find_mode(target: &dyn TargetDistribution, x0: &DVector<f64>, max_iter: usize) -> Result<DVector<f64>> {
    let (mut f, mut g) = target.value_and_grad(x0)?;
    let mut x = x0.clone();
    let mut step = 1e-3 / g.norm().max(1.0);
    for _ in 0..max_iter {
        if g.norm() <= 1e-9 * (1.0 + f.abs()) {
            break;
        }
        let mut s = step;
        loop {
            let y = &x + &g * s;
            let (fy, gy) = target.value_and_grad_unchecked(&y);
            if fy.is_finite() && fy >= f + 1e-4 * s * g.norm_squared() {
                let dx = &y - &x;
                let dg = &g - &gy;
                let curv = dx.dot(&dg);
                step = if curv > 0.0 { dx.norm_squared() / curv } else { 2.0 * s };
                x = y;
                f = fy;
                g = gy;
                break;
            }
            s *= 0.5;
            if s < 1e-300 {
                return Ok(x);
            }
        }
    }
    Ok(x)
}

/// Per-point results of a budget-matched run over replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssPoint {
    pub kernel: KernelKind,
    pub dt: f64,
    pub beta: f64,
    pub n_steps: usize,
    pub budget_per_chain: Budget,
    /// (J index, replica) of each valid chain, aligned with `ess`.
    pub chain_ids: Vec<(usize, usize)>,
    /// replica × coordinate.
    pub ess: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub intervals: Vec<Vec<(f64, f64)>>,
    pub acceptance: f64,
    pub n_invalid: usize,
    pub n_flagged: usize,
}

impl EssPoint {
    pub fn usable(&self) -> bool {
        self.n_invalid == 0 && self.n_flagged == 0 && !self.ess.is_empty()
    }

    /// ESS of each coordinate averaged over replicas.
    pub fn mean_ess(&self) -> Vec<f64> {
        let d = self.ess.first().map_or(0, Vec::len);
        (0..d)
            .map(|i| self.ess.iter().map(|r| r[i]).sum::<f64>() / self.ess.len() as f64)
            .collect()
    }

    pub fn median_ess(&self) -> f64 {
        median(&self.mean_ess())
    }

    /// Fraction of replicas whose interval for coordinate i contains `reference[i]`.
    pub fn coverage(&self, reference: &[f64]) -> Vec<f64> {
        reference
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let hits = self.intervals.iter().filter(|iv| iv[i].0 <= r && r <= iv[i].1).count();
                hits as f64 / self.intervals.len().max(1) as f64
            })
            .collect()
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Common inputs of a budget-matched comparison.
#[derive(Clone)]
pub struct RunPlan {
    pub target: Arc<dyn TargetDistribution>,
    pub spec: SamplerSpec,
    pub x0: DVector<f64>,
    pub budget: u64,
    pub replicas: usize,
    pub seed: u64,
}

fn coordinate_observables(d: usize) -> Vec<Observable> {
    (0..d).map(observables::coordinate).collect()
}

/// Per-coordinate ESS, means, intervals, and whether any ESS was flagged.
type ChainSummary = (Vec<f64>, Vec<f64>, Vec<(f64, f64)>, bool);

fn summarize_chain(res: &ChainResult, d: usize) -> Result<ChainSummary> {
    let mut ess = Vec::with_capacity(d);
    let mut means = Vec::with_capacity(d);
    let mut cis = Vec::with_capacity(d);
    let mut flagged = false;
    for i in 0..d {
        let s = ObservableSeries::from_chain(res, i, 0.0)?;
        let e = ess_of(s.values())?;
        flagged |= e.flagged;
        ess.push(e.ess);
        means.push(res.average(i));
        cis.push(confidence_interval(&s, default_batches(s.len()))?);
    }
    Ok((ess, means, cis, flagged))
}

/// Runs `plan.replicas` chains per J at one (Δt, β); `js` lists the skew
/// matrices (one entry per J, replicas run for each).
pub fn run_ess_point(plan: &RunPlan, js: &[SkewMatrix], point: SweepPoint, grid_index: u64) -> Result<EssPoint> {
    let d = plan.target.dim();
    let obs = coordinate_observables(d);
    let jobs: Vec<(usize, usize)> = (0..js.len()).flat_map(|ji| (0..plan.replicas).map(move |r| (ji, r))).collect();
    let configs: Vec<SplittingConfig> = js
        .iter()
        .map(|j| plan.spec.build(plan.target.clone(), j.clone(), point.dt, point.beta, &plan.x0))
        .collect::<Result<_>>()?;
    let n_steps = configs[0].steps_for_budget(plan.budget)?;
    if n_steps < 100 {
        return Err(Error::param(format!("budget {} allows only {n_steps} steps", plan.budget)));
    }
    let opts = RunOptions { store_series: true, store_samples: false };
    let results: Vec<Result<(ChainResult, Option<ChainSummary>)>> = jobs
        .par_iter()
        .map(|&(ji, r)| {
            let seed = derive_seed(plan.seed, grid_index, (ji * plan.replicas + r) as u64);
            let res = run_chain_with(&configs[ji], &plan.x0, n_steps, &obs, seed, opts)?;
            let summary = if res.is_valid() { Some(summarize_chain(&res, d)?) } else { None };
            Ok((ChainResult { series: Vec::new(), ..res }, summary))
        })
        .collect();
    let mut point_out = EssPoint {
        kernel: plan.spec.kernel,
        dt: point.dt,
        beta: point.beta,
        n_steps,
        budget_per_chain: Budget::default(),
        chain_ids: Vec::new(),
        ess: Vec::new(),
        means: Vec::new(),
        intervals: Vec::new(),
        acceptance: 0.0,
        n_invalid: 0,
        n_flagged: 0,
    };
    let mut acc = 0.0;
    let total = results.len();
    for (r, &id) in results.into_iter().zip(&jobs) {
        let (res, summary) = r?;
        acc += res.acceptance_rate();
        point_out.budget_per_chain = res.budget;
        match summary {
            Some((ess, means, cis, flagged)) => {
                point_out.n_flagged += flagged as usize;
                point_out.chain_ids.push(id);
                point_out.ess.push(ess);
                point_out.means.push(means);
                point_out.intervals.push(cis);
            }
            None => point_out.n_invalid += 1,
        }
    }
    point_out.acceptance = acc / total as f64;
    Ok(point_out)
}

/// Best usable point by median ESS.
pub fn best_by_ess(points: &[EssPoint]) -> Option<&EssPoint> {
    points
        .iter()
        .filter(|p| p.usable())
        .max_by(|a, b| a.median_ess().total_cmp(&b.median_ess()))
}

/// Posterior means from one long chain.
pub fn reference_means(plan: &RunPlan, j: &SkewMatrix, point: SweepPoint) -> Result<Vec<f64>> {
    let d = plan.target.dim();
    let cfg = plan.spec.build(plan.target.clone(), j.clone(), point.dt, point.beta, &plan.x0)?;
    let n = cfg.steps_for_budget(plan.budget)?;
    let obs = coordinate_observables(d);
    let res = run_chain_with(&cfg, &plan.x0, n, &obs, derive_seed(plan.seed, u64::MAX, 0), RunOptions {
        store_series: false,
        store_samples: false,
    })?;
    if let Some(f) = res.failure {
        return Err(Error::NonFinite(format!("reference chain failed: {f}")));
    }
    Ok((0..d).map(|i| res.average(i)).collect())
}

/// MSE of one observable at one sweep point for the warped-Gaussian study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsePoint {
    pub kernel: KernelKind,
    pub dt: f64,
    pub beta: f64,
    pub n_steps: usize,
    pub budget_per_chain: Budget,
    pub mse: Option<MseDecomposition>,
    pub acceptance: f64,
    pub n_invalid: usize,
}

/// Replicated runs of `observable` at one point; invalid chains leave `mse` empty.
pub fn run_mse_point(
    plan: &RunPlan,
    j: &SkewMatrix,
    observable: &Observable,
    f_ref: f64,
    point: SweepPoint,
    grid_index: u64,
) -> Result<MsePoint> {
    let cfg = plan.spec.build(plan.target.clone(), j.clone(), point.dt, point.beta, &plan.x0)?;
    let n_steps = cfg.steps_for_budget(plan.budget)?;
    if n_steps == 0 {
        return Err(Error::param("budget too small for a single step"));
    }
    let obs = std::slice::from_ref(observable);
    let opts = RunOptions { store_series: false, store_samples: false };
    let results: Vec<ChainResult> = (0..plan.replicas as u64)
        .into_par_iter()
        .map(|r| run_chain_with(&cfg, &plan.x0, n_steps, obs, derive_seed(plan.seed, grid_index, r), opts))
        .collect::<Result<_>>()?;
    let n_invalid = results.iter().filter(|r| !r.is_valid()).count();
    let acceptance = results.iter().map(ChainResult::acceptance_rate).sum::<f64>() / results.len() as f64;
    let mse = if n_invalid == 0 {
        let avgs: Vec<f64> = results.iter().map(|r| r.average(0)).collect();
        Some(mse_of_averages(&avgs, f_ref)?)
    } else {
        None
    };
    Ok(MsePoint {
        kernel: plan.spec.kernel,
        dt: point.dt,
        beta: point.beta,
        n_steps,
        budget_per_chain: results[0].budget,
        mse,
        acceptance,
        n_invalid,
    })
}

/// Smallest MSE among points with all chains valid.
pub fn best_by_mse(points: &[MsePoint]) -> Option<&MsePoint> {
    points
        .iter()
        .filter(|p| p.mse.is_some())
        .min_by(|a, b| a.mse.unwrap().mse.total_cmp(&b.mse.unwrap().mse))
}
