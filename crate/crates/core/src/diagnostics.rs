//! Estimators over chain output and a quadrature reference for 2D targets.

use std::cmp::Ordering as CmpOrdering;
use std::collections::BinaryHeap;

use nalgebra::DVector;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::gauss_legendre;
use crate::splitting::{Budget, ChainResult};
use crate::targets::TargetDistribution;

/// Scalar observable recorded along a chain with step size `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries {
    values: Vec<f64>,
    dt: f64,
    budget: Budget,
}

impl ObservableSeries {
    pub fn new(values: Vec<f64>, dt: f64) -> Result<Self> {
        Self::with_budget(values, dt, Budget::default())
    }

    pub fn with_budget(values: Vec<f64>, dt: f64, budget: Budget) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::param("a series needs at least two values"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("series value {i} is not finite")));
        }
        if !(dt > 0.0) {
            return Err(Error::param("dt must be positive"));
        }
        Ok(Self { values, dt, budget })
    }

    /// Series of observable `i` of a stored chain, dropping the first
    /// `discard` fraction of values.
    pub fn from_chain(result: &ChainResult, i: usize, discard: f64) -> Result<Self> {
        let all = result
            .series
            .get(i)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::param(format!("observable {i} was not stored")))?;
        let start = ((all.len() as f64) * discard.clamp(0.0, 1.0)).floor() as usize;
        Self::with_budget(all[start..].to_vec(), result.dt, result.budget)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    /// Simulated time T = N·dt.
    pub fn horizon(&self) -> f64 {
        self.values.len() as f64 * self.dt
    }
}

pub fn ergodic_average(s: &ObservableSeries) -> f64 {
    s.values.iter().sum::<f64>() / s.len() as f64
}

/// Effective sample size; `flagged` marks the zero-variance convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub ess: f64,
    pub flagged: bool,
}

/// Biased autocovariances γ_k = (1/N) Σ (x_i − x̄)(x_{i+k} − x̄) for k < N.
pub fn autocovariance(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = values
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let scale = 1.0 / (size as f64 * n as f64);
    buf[..n].iter().map(|z| z.re * scale).collect()
}

fn is_constant(values: &[f64]) -> bool {
    values.iter().all(|&v| v == values[0])
}

/// ESS by Geyer's initial monotone positive sequence, clipped to [1, N].
pub fn ess(s: &ObservableSeries) -> Result<EssEstimate> {
    ess_of(s.values())
}

pub fn ess_of(values: &[f64]) -> Result<EssEstimate> {
    let n = values.len();
    if n < 100 {
        return Err(Error::param(format!("ESS needs at least 100 values, got {n}")));
    }
    let nf = n as f64;
    if is_constant(values) {
        return Ok(EssEstimate { ess: nf, flagged: true });
    }
    let acov = autocovariance(values);
    let var0 = acov[0];
    if !(var0 > 0.0) {
        return Ok(EssEstimate { ess: nf, flagged: true });
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (acov[2 * k] + acov[2 * k + 1]) / var0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = -1.0 + 2.0 * sum;
    let ess = if tau > 0.0 { nf / tau } else { nf };
    Ok(EssEstimate { ess: ess.clamp(1.0, nf), flagged: false })
}

/// Batch count ⌊√N⌋, clamped to [10, N/10].
pub fn default_batches(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).clamp(10, (n / 10).max(10))
}

/// Batch-means estimate of Δt·N·Var(mean): Δt·b·S² over batches of length b.
pub fn batch_means_variance(s: &ObservableSeries, n_batches: usize) -> Result<f64> {
    let n = s.len();
    if n_batches < 10 || n_batches > n / 10 {
        return Err(Error::param(format!(
            "need between 10 and N/10 = {} batches, got {n_batches}",
            n / 10
        )));
    }
    let b = n / n_batches;
    let means: Vec<f64> = s.values[..b * n_batches]
        .chunks_exact(b)
        .map(|c| c.iter().sum::<f64>() / b as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / n_batches as f64;
    let s2 = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    Ok(s.dt * b as f64 * s2)
}

/// Normal 95% interval mean ± 1.96·√(σ̂²/T).
pub fn confidence_interval(s: &ObservableSeries, n_batches: usize) -> Result<(f64, f64)> {
    let m = ergodic_average(s);
    let half = 1.96 * (batch_means_variance(s, n_batches)? / s.horizon()).sqrt();
    Ok((m - half, m + half))
}

/// Replica-averaged squared error and its split into bias² and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseDecomposition {
    pub mse: f64,
    pub bias2: f64,
    pub variance: f64,
}

pub fn mse_of_averages(averages: &[f64], f_ref: f64) -> Result<MseDecomposition> {
    if averages.len() < 2 {
        return Err(Error::param("need at least two replicas"));
    }
    let r = averages.len() as f64;
    let mse = averages.iter().map(|a| (a - f_ref).powi(2)).sum::<f64>() / r;
    let mean = averages.iter().sum::<f64>() / r;
    let bias2 = (mean - f_ref).powi(2);
    Ok(MseDecomposition { mse, bias2, variance: mse - bias2 })
}

/// MSE of observable `i` over independent replicas.
pub fn mse_over_replicas(results: &[ChainResult], f_ref: f64, i: usize) -> Result<MseDecomposition> {
    let avgs: Vec<f64> = results.iter().map(|r| r.average(i)).collect();
    mse_of_averages(&avgs, f_ref)
}

/// Axis-aligned rectangle [x0, x1] × [y0, y1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2 {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Box2 {
    /// Integration box used for the warped Gaussian with b = 0.05; it
    /// contains the curved ridge x₂ ≈ 5 − 0.05x₁² out to |x₁| = 100.
    pub fn warped_default() -> Self {
        Self { x: (-100.0, 100.0), y: (-520.0, 30.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error: f64,
    pub cells: usize,
}

struct Cell {
    rect: Box2,
    z: f64,
    f: f64,
    ez: f64,
    ef: f64,
    key: f64,
}

impl PartialEq for Cell {
    fn eq(&self, o: &Self) -> bool {
        self.key == o.key
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, o: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(o))
    }
}
impl Ord for Cell {
    fn cmp(&self, o: &Self) -> CmpOrdering {
        self.key.total_cmp(&o.key)
    }
}

struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn tensor_rule(
    target: &dyn TargetDistribution,
    f: &dyn Fn(&DVector<f64>) -> f64,
    rect: &Box2,
    rule: &Rule,
    ell_ref: f64,
) -> (f64, f64) {
    let (hx, cx) = ((rect.x.1 - rect.x.0) / 2.0, (rect.x.1 + rect.x.0) / 2.0);
    let (hy, cy) = ((rect.y.1 - rect.y.0) / 2.0, (rect.y.1 + rect.y.0) / 2.0);
    let mut z = 0.0;
    let mut fz = 0.0;
    let mut p = DVector::zeros(2);
    for (xi, wi) in rule.nodes.iter().zip(&rule.weights) {
        for (yj, wj) in rule.nodes.iter().zip(&rule.weights) {
            p[0] = cx + hx * xi;
            p[1] = cy + hy * yj;
            let w = wi * wj * (target.log_density_unchecked(&p) - ell_ref).exp();
            if w > 0.0 {
                z += w;
                fz += w * f(&p);
            }
        }
    }
    (z * hx * hy, fz * hx * hy)
}

/// E_π[f] on a box by adaptive tensor Gauss–Legendre quadrature
/// (10- and 20-point rules, bisecting the cell with the largest error).
pub fn quadrature_reference(
    target: &dyn TargetDistribution,
    f: &dyn Fn(&DVector<f64>) -> f64,
    domain: Box2,
    tol: f64,
) -> Result<QuadratureResult> {
    if target.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: target.dim() });
    }
    if !(tol > 0.0) || !(domain.x.1 > domain.x.0 && domain.y.1 > domain.y.0) {
        return Err(Error::param("need a positive tolerance and a non-degenerate box"));
    }
    const SCAN: usize = 400;
    let mut ell_ref = f64::NEG_INFINITY;
    let mut p = DVector::zeros(2);
    for i in 0..=SCAN {
        for j in 0..=SCAN {
            p[0] = domain.x.0 + (domain.x.1 - domain.x.0) * i as f64 / SCAN as f64;
            p[1] = domain.y.0 + (domain.y.1 - domain.y.0) * j as f64 / SCAN as f64;
            ell_ref = ell_ref.max(target.log_density_unchecked(&p));
        }
    }
    let make_rule = |n| {
        let (nodes, weights) = gauss_legendre(n);
        Rule { nodes, weights }
    };
    let (coarse, fine) = (make_rule(10), make_rule(20));
    let evaluate = |rect: Box2, ratio: f64| {
        let (z1, f1) = tensor_rule(target, f, &rect, &coarse, ell_ref);
        let (z2, f2) = tensor_rule(target, f, &rect, &fine, ell_ref);
        let (ez, ef) = ((z2 - z1).abs(), (f2 - f1).abs());
        Cell { rect, z: z2, f: f2, ez, ef, key: ef + ratio.abs() * ez }
    };
    const INITIAL: usize = 32;
    let mut heap = BinaryHeap::new();
    for i in 0..INITIAL {
        for j in 0..INITIAL {
            let fx = |k: usize| domain.x.0 + (domain.x.1 - domain.x.0) * k as f64 / INITIAL as f64;
            let fy = |k: usize| domain.y.0 + (domain.y.1 - domain.y.0) * k as f64 / INITIAL as f64;
            heap.push(evaluate(Box2 { x: (fx(i), fx(i + 1)), y: (fy(j), fy(j + 1)) }, 0.0));
        }
    }
    let totals = |heap: &BinaryHeap<Cell>| {
        heap.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, c| (acc.0 + c.z, acc.1 + c.f, acc.2 + c.ez, acc.3 + c.ef))
    };
    let (mut z, mut fz, mut ez, mut ef) = totals(&heap);
    const MAX_CELLS: usize = 400_000;
    let mut key_ratio = 0.0;
    loop {
        if !(z > 0.0) {
            return Err(Error::param("density vanishes on the quadrature box"));
        }
        let ratio = fz / z;
        if (ratio - key_ratio).abs() > 0.1 * ratio.abs() {
            key_ratio = ratio;
            heap = heap
                .into_iter()
                .map(|c| Cell { key: c.ef + ratio.abs() * c.ez, ..c })
                .collect();
        }
        let err = (ef + ratio.abs() * ez) / z;
        if err <= tol {
            let (z, fz, ez, ef) = totals(&heap);
            let ratio = fz / z;
            return Ok(QuadratureResult { value: ratio, error: (ef + ratio.abs() * ez) / z, cells: heap.len() });
        }
        if heap.len() >= MAX_CELLS {
            return Err(Error::Quadrature { achieved: err, tol });
        }
        let worst = heap.pop().expect("heap is never empty");
        z -= worst.z;
        fz -= worst.f;
        ez -= worst.ez;
        ef -= worst.ef;
        let (x0, x1) = worst.rect.x;
        let (y0, y1) = worst.rect.y;
        let (xm, ym) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        for rect in [
            Box2 { x: (x0, xm), y: (y0, ym) },
            Box2 { x: (xm, x1), y: (y0, ym) },
            Box2 { x: (x0, xm), y: (ym, y1) },
            Box2 { x: (xm, x1), y: (ym, y1) },
        ] {
            let c = evaluate(rect, ratio);
            z += c.z;
            fz += c.f;
            ez += c.ez;
            ef += c.ef;
            heap.push(c);
        }
    }
}
