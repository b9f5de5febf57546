use nalgebra::{DMatrix, DVector};

use super::TargetDistribution;
use crate::error::{Error, Result};

/// Bayesian logistic regression posterior with a centred Gaussian prior.
///
/// Responses are coded in {0, 1}; the log-likelihood is
/// Σᵢ Yᵢ θᵀXᵢ − log(1 + exp(θᵀXᵢ)).
#[derive(Debug, Clone)]
pub struct LogisticRegressionTarget {
    design: DMatrix<f64>,
    response: DVector<f64>,
    prior_precision: DMatrix<f64>,
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticRegressionTarget {
    pub fn new(design: DMatrix<f64>, response: DVector<f64>, prior_precision: DMatrix<f64>) -> Result<Self> {
        let (m, d) = design.shape();
        if m == 0 || d == 0 {
            return Err(Error::param("design matrix must be non-empty"));
        }
        if response.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: response.len() });
        }
        if let Some(row) = (0..m).find(|&i| design.row(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::Data(format!("design row {row} has non-finite entries")));
        }
        if let Some(i) = response.iter().position(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Data(format!("response {i} is {}, expected 0 or 1", response[i])));
        }
        if prior_precision.shape() != (d, d) {
            return Err(Error::param(format!("prior precision must be {d}x{d}")));
        }
        if (&prior_precision - prior_precision.transpose()).amax() > 1e-12 * prior_precision.amax().max(1.0) {
            return Err(Error::param("prior precision must be symmetric"));
        }
        Ok(Self { design, response, prior_precision })
    }

    /// Prior N(0, scale·I), the default being scale = 100.
    pub fn with_isotropic_prior(design: DMatrix<f64>, response: DVector<f64>, prior_variance: f64) -> Result<Self> {
        if !(prior_variance > 0.0) {
            return Err(Error::param("prior variance must be positive"));
        }
        let d = design.ncols();
        Self::new(design, response, DMatrix::identity(d, d) / prior_variance)
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn n_observations(&self) -> usize {
        self.design.nrows()
    }
}

impl TargetDistribution for LogisticRegressionTarget {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn log_density_unchecked(&self, theta: &DVector<f64>) -> f64 {
        let eta = &self.design * theta;
        let lik: f64 = eta
            .iter()
            .zip(self.response.iter())
            .map(|(&e, &y)| y * e - softplus(e))
            .sum();
        lik - 0.5 * theta.dot(&(&self.prior_precision * theta))
    }

    fn grad_log_density_unchecked(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.value_and_grad_unchecked(theta).1
    }

    fn value_and_grad_unchecked(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let eta = &self.design * theta;
        let mut lik = 0.0;
        let mut resid = DVector::zeros(eta.len());
        for (i, (&e, &y)) in eta.iter().zip(self.response.iter()).enumerate() {
            lik += y * e - softplus(e);
            resid[i] = y - sigmoid(e);
        }
        let ptheta = &self.prior_precision * theta;
        let grad = self.design.tr_mul(&resid) - &ptheta;
        (lik - 0.5 * theta.dot(&ptheta), grad)
    }
}
