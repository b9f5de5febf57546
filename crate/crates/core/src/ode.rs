//! One-step integrators for the deterministic flow dx/dt = γ(x).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flows::NonreversibleFlow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum IntegratorMethod {
    Euler,
    Rk4,
    /// Truncated exponential series of order p; linear flows only.
    TaylorP { p: usize },
}

/// Integration method and the number of equal sub-steps per call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowIntegrator {
    #[serde(flatten)]
    pub method: IntegratorMethod,
    #[serde(default = "one")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

impl Default for FlowIntegrator {
    fn default() -> Self {
        Self::rk4(1)
    }
}

impl FlowIntegrator {
    pub fn euler(substeps: usize) -> Self {
        Self { method: IntegratorMethod::Euler, substeps }
    }

    pub fn rk4(substeps: usize) -> Self {
        Self { method: IntegratorMethod::Rk4, substeps }
    }

    pub fn taylor(p: usize) -> Self {
        Self { method: IntegratorMethod::TaylorP { p }, substeps: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::param("integrator needs at least one sub-step"));
        }
        if let IntegratorMethod::TaylorP { p: 0 } = self.method {
            return Err(Error::param("Taylor order must be at least 1"));
        }
        Ok(())
    }

    /// Local order of accuracy of the flow map.
    pub fn order(&self) -> usize {
        match self.method {
            IntegratorMethod::Euler => 1,
            IntegratorMethod::Rk4 => 4,
            IntegratorMethod::TaylorP { p } => p,
        }
    }

    /// (density, gradient) evaluations of one `flow_step`.
    pub fn cost(&self, flow: &NonreversibleFlow) -> (u64, u64) {
        let calls = match self.method {
            IntegratorMethod::Euler => self.substeps as u64,
            IntegratorMethod::Rk4 => 4 * self.substeps as u64,
            IntegratorMethod::TaylorP { .. } => 0,
        };
        let (d, g) = flow.cost_per_eval();
        (calls * d, calls * g)
    }
}

/// T_p(dt·G)·x evaluated in Horner form.
pub fn taylor_step_linear(g: &DMatrix<f64>, p: usize, x: &DVector<f64>, dt: f64) -> DVector<f64> {
    let mut y = x.clone();
    for k in (1..=p).rev() {
        y = x + g * y * (dt / k as f64);
    }
    y
}

fn rk4_substep(flow: &NonreversibleFlow, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = flow.evaluate_unchecked(x);
    let k2 = flow.evaluate_unchecked(&(x + &k1 * (h / 2.0)));
    let k3 = flow.evaluate_unchecked(&(x + &k2 * (h / 2.0)));
    let k4 = flow.evaluate_unchecked(&(x + &k3 * h));
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

/// Advances `x` by `dt` along the flow.
pub fn flow_step(integ: &FlowIntegrator, flow: &NonreversibleFlow, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    integ.validate()?;
    check_dim(flow.dim(), x.len())?;
    if !(dt > 0.0) {
        return Err(Error::param("dt must be positive"));
    }
    if flow.beta() == 0.0 {
        return Ok(x.clone());
    }
    let s = integ.substeps;
    let h = dt / s as f64;
    let mut y = x.clone();
    match integ.method {
        IntegratorMethod::Euler => {
            for _ in 0..s {
                let v = flow.evaluate_unchecked(&y);
                y += v * h;
            }
        }
        IntegratorMethod::Rk4 => {
            for _ in 0..s {
                y = rk4_substep(flow, &y, h);
            }
        }
        IntegratorMethod::TaylorP { p } => {
            let g = flow
                .linear_matrix()
                .ok_or_else(|| Error::param("Taylor integrator requires a linear flow"))?;
            for _ in 0..s {
                y = taylor_step_linear(&g, p, &y, h);
            }
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("flow integrator blew up (flow too stiff for this step)".into()));
    }
    Ok(y)
}

/// Least-squares slope of log one-step error against log dt.
///
/// The reference solution is RK4 with 64 sub-steps.
pub fn order_of_accuracy(integ: &FlowIntegrator, flow: &NonreversibleFlow, x0: &DVector<f64>, dts: &[f64]) -> Result<f64> {
    if dts.len() < 4 {
        return Err(Error::param("need at least four step sizes"));
    }
    if dts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("step sizes must be decreasing"));
    }
    let reference = FlowIntegrator::rk4(64);
    let mut errors = Vec::with_capacity(dts.len());
    for &dt in dts {
        let approx = flow_step(integ, flow, x0, dt)?;
        let exact = flow_step(&reference, flow, x0, dt)?;
        errors.push((approx - exact).norm());
    }
    if errors[0] < 1e-13 {
        return Err(Error::Saturated(errors[0]));
    }
    let pts: Vec<(f64, f64)> = dts.iter().zip(&errors).map(|(d, e)| (d.ln(), e.max(1e-300).ln())).collect();
    Ok(least_squares_slope(&pts))
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
