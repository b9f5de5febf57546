//! Target distributions: unnormalized log-densities and their gradients.

mod cox;
pub mod data;
mod logistic;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

pub use cox::{CoxParams, LogGaussianCoxTarget};
pub use logistic::LogisticRegressionTarget;

/// A distribution on R^d known up to its normalizing constant.
///
/// Implementors provide the unchecked evaluations; callers use the checked
/// `log_density` and `grad_log_density`.
pub trait TargetDistribution: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density_unchecked(&self, x: &DVector<f64>) -> f64;

    fn grad_log_density_unchecked(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Both at once; override when the two share work.
    fn value_and_grad_unchecked(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.log_density_unchecked(x), self.grad_log_density_unchecked(x))
    }

    /// Precision matrix when the target is a centred Gaussian.
    fn gaussian_precision(&self) -> Option<&DMatrix<f64>> {
        None
    }

    fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.log_density_unchecked(x))
    }

    fn grad_log_density(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.grad_log_density_unchecked(x))
    }

    fn value_and_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        check_dim(self.dim(), x.len())?;
        Ok(self.value_and_grad_unchecked(x))
    }
}

/// Centred Gaussian with precision `P`: log π(x) = -x·Px/2.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    precision: DMatrix<f64>,
}

impl GaussianTarget {
    pub fn new(precision: DMatrix<f64>) -> Result<Self> {
        let n = precision.nrows();
        if n == 0 || precision.ncols() != n {
            return Err(Error::param("precision must be a non-empty square matrix"));
        }
        let scale = precision.amax().max(1.0);
        if (&precision - precision.transpose()).amax() > 1e-12 * scale {
            return Err(Error::param("precision must be symmetric"));
        }
        if precision.clone().cholesky().is_none() {
            return Err(Error::param("precision must be positive definite"));
        }
        Ok(Self { precision })
    }

    /// Isotropic Gaussian with precision `alpha·I`.
    pub fn isotropic(d: usize, alpha: f64) -> Result<Self> {
        Self::new(DMatrix::identity(d, d) * alpha)
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

impl TargetDistribution for GaussianTarget {
    fn dim(&self) -> usize {
        self.precision.nrows()
    }

    fn log_density_unchecked(&self, x: &DVector<f64>) -> f64 {
        -0.5 * x.dot(&(&self.precision * x))
    }

    fn grad_log_density_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.precision * x)
    }

    fn value_and_grad_unchecked(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let px = &self.precision * x;
        (-0.5 * x.dot(&px), -px)
    }

    fn gaussian_precision(&self) -> Option<&DMatrix<f64>> {
        Some(&self.precision)
    }
}

/// Banana-shaped density on R²:
/// log π(x) = -x₁²/100 - (x₂ + b x₁² - 100 b)².
#[derive(Debug, Clone)]
pub struct WarpedGaussianTarget {
    b: f64,
}

impl WarpedGaussianTarget {
    pub fn new(b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::param(format!("warp parameter b must be positive, got {b}")));
        }
        Ok(Self { b })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    fn ridge(&self, x: &DVector<f64>) -> f64 {
        x[1] + self.b * x[0] * x[0] - 100.0 * self.b
    }
}

impl TargetDistribution for WarpedGaussianTarget {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_unchecked(&self, x: &DVector<f64>) -> f64 {
        let u = self.ridge(x);
        -x[0] * x[0] / 100.0 - u * u
    }

    fn grad_log_density_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let u = self.ridge(x);
        DVector::from_vec(vec![-x[0] / 50.0 - 4.0 * self.b * x[0] * u, -2.0 * u])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_rejects_asymmetric() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GaussianTarget::new(p).is_err());
    }

    #[test]
    fn gaussian_rejects_indefinite() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(GaussianTarget::new(p).is_err());
    }

    #[test]
    fn warped_rejects_nonpositive_b() {
        assert!(WarpedGaussianTarget::new(0.0).is_err());
        assert!(WarpedGaussianTarget::new(-1.0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let t = WarpedGaussianTarget::new(0.05).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(
            t.log_density(&x),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        );
        assert!(t.grad_log_density(&x).is_err());
    }
}
