use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::TargetDistribution;
use crate::error::{Error, Result};

/// Prior hyperparameters of the log-Gaussian Cox model.
///
/// Defaults follow the pine-sapling analyses of Møller et al. (1998).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoxParams {
    pub sigma2: f64,
    pub corr_scale: f64,
    /// Prior mean of every cell; `None` uses log(total count) − σ²/2.
    pub mean: Option<f64>,
}

impl Default for CoxParams {
    fn default() -> Self {
        Self { sigma2: 1.91, corr_scale: 1.0 / 33.0, mean: None }
    }
}

/// Posterior of the latent log-intensity field on an n×n lattice.
///
/// log π(y) = Σ (xᵢ yᵢ − m e^{yᵢ}) − ½ (y − μ)ᵀ Σ⁻¹ (y − μ), with
/// Σ = σ² exp(−dist / (n β)) and m = 1/n².
#[derive(Debug, Clone)]
pub struct LogGaussianCoxTarget {
    grid_side: usize,
    counts: DVector<f64>,
    total: u64,
    mean: f64,
    params: CoxParams,
    cell_area: f64,
    prior_chol: Cholesky<f64, Dyn>,
}

impl LogGaussianCoxTarget {
    /// `counts` is row-major over the grid, cell (i, j) at index i·n + j.
    pub fn new(grid_side: usize, counts: &[u32], params: CoxParams) -> Result<Self> {
        let n = grid_side;
        if n == 0 {
            return Err(Error::param("grid side must be positive"));
        }
        if counts.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: counts.len() });
        }
        if !(params.sigma2 > 0.0 && params.corr_scale > 0.0) {
            return Err(Error::param("sigma2 and corr_scale must be positive"));
        }
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        let mean = match params.mean {
            Some(mu) => mu,
            None if total > 0 => (total as f64).ln() - params.sigma2 / 2.0,
            None => return Err(Error::param("prior mean must be given when there are no points")),
        };
        let d = n * n;
        let length = n as f64 * params.corr_scale;
        let cov = DMatrix::from_fn(d, d, |a, b| {
            let (ia, ja) = ((a / n) as f64, (a % n) as f64);
            let (ib, jb) = ((b / n) as f64, (b % n) as f64);
            let dist = ((ia - ib).powi(2) + (ja - jb).powi(2)).sqrt();
            params.sigma2 * (-dist / length).exp()
        });
        let prior_chol = cov
            .cholesky()
            .ok_or_else(|| Error::Singular("prior covariance is not positive definite".into()))?;
        Ok(Self {
            grid_side: n,
            counts: DVector::from_iterator(d, counts.iter().map(|&c| c as f64)),
            total,
            mean,
            params,
            cell_area: 1.0 / d as f64,
            prior_chol,
        })
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    pub fn total_count(&self) -> u64 {
        self.total
    }

    pub fn prior_mean(&self) -> f64 {
        self.mean
    }

    pub fn params(&self) -> CoxParams {
        self.params
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    pub fn prior_cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.prior_chol
    }

    /// Poisson part Σ (xᵢ yᵢ − m e^{yᵢ}) of the log-density.
    pub fn poisson_term(&self, y: &DVector<f64>) -> f64 {
        y.iter()
            .zip(self.counts.iter())
            .map(|(&yi, &xi)| xi * yi - self.cell_area * yi.exp())
            .sum()
    }

    fn centred_precision_product(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let r = y.map(|v| v - self.mean);
        let z = self.prior_chol.solve(&r);
        (r, z)
    }
}

impl TargetDistribution for LogGaussianCoxTarget {
    fn dim(&self) -> usize {
        self.grid_side * self.grid_side
    }

    fn log_density_unchecked(&self, y: &DVector<f64>) -> f64 {
        let (r, z) = self.centred_precision_product(y);
        self.poisson_term(y) - 0.5 * r.dot(&z)
    }

    fn grad_log_density_unchecked(&self, y: &DVector<f64>) -> DVector<f64> {
        self.value_and_grad_unchecked(y).1
    }

    fn value_and_grad_unchecked(&self, y: &DVector<f64>) -> (f64, DVector<f64>) {
        let (r, z) = self.centred_precision_product(y);
        let mut grad = -z.clone();
        let mut poisson = 0.0;
        for i in 0..y.len() {
            let e = self.cell_area * y[i].exp();
            poisson += self.counts[i] * y[i] - e;
            grad[i] += self.counts[i] - e;
        }
        (poisson - 0.5 * r.dot(&z), grad)
    }
}
