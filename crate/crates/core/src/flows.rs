//! Divergence-free nonreversible vector fields γ and their skew matrices.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::targets::TargetDistribution;

/// A real skew-symmetric matrix, J = −Jᵀ by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMatrix(DMatrix<f64>);

impl SkewMatrix {
    /// Accepts `m` only if it is exactly skew-symmetric.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::param("skew matrix must be square"));
        }
        if m != -m.transpose() {
            return Err(Error::param("matrix is not skew-symmetric"));
        }
        Ok(Self(m))
    }

    /// Builds J from its strictly upper triangle, mirroring with a sign flip.
    pub fn from_upper(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::param("skew matrix must be square"));
        }
        let mut j = DMatrix::zeros(n, n);
        for r in 0..n {
            for c in r + 1..n {
                j[(r, c)] = m[(r, c)];
                j[(c, r)] = -m[(r, c)];
            }
        }
        Ok(Self(j))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn negated(&self) -> Self {
        Self(-&self.0)
    }
}

/// The 2×2 rotation generator [[0, 1], [−1, 0]].
pub fn make_rotation_2d() -> SkewMatrix {
    SkewMatrix(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]))
}

/// Random chain-structured skew matrix: for a random permutation σ,
/// J[σ(i), σ(i+1)] = 1 and J[σ(i+1), σ(i)] = −1.
pub fn make_permutation_skew(d: usize, seed: u64) -> Result<SkewMatrix> {
    if d < 2 {
        return Err(Error::param(format!("permutation skew matrix needs d >= 2, got {d}")));
    }
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut j = DMatrix::zeros(d, d);
    for w in perm.windows(2) {
        j[(w[0], w[1])] = 1.0;
        j[(w[1], w[0])] = -1.0;
    }
    Ok(SkewMatrix(j))
}

/// Which scalar weight multiplies J∇log π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowKind {
    /// γ = β J ∇log π.
    LogGrad,
    /// γ = β J ∇π̃^α = β α π̃^α J ∇log π, with π̃ = exp(ℓ − ℓ_ref).
    Power { alpha: f64, ell_ref: f64 },
    /// γ = β Ψ(π̃) J ∇log π, with Ψ a C² bump supported on (lo, hi).
    Compact { lo: f64, hi: f64, ell_ref: f64 },
}

/// C² bump on (lo, hi): smoothstep up on the lower half, mirrored down on
/// the upper half, peak 1 at the midpoint.
pub fn bump(u: f64, lo: f64, hi: f64) -> f64 {
    let t = (u - lo) / (hi - lo);
    if !(t > 0.0 && t < 1.0) {
        return 0.0;
    }
    let s = |r: f64| r * r * r * (r * (6.0 * r - 15.0) + 10.0);
    if t <= 0.5 { s(2.0 * t) } else { s(2.0 - 2.0 * t) }
}

/// Nonreversible drift γ(x), divergence-free with respect to the target.
#[derive(Clone)]
pub struct NonreversibleFlow {
    kind: FlowKind,
    j: SkewMatrix,
    beta: f64,
    target: Arc<dyn TargetDistribution>,
}

impl fmt::Debug for NonreversibleFlow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonreversibleFlow")
            .field("kind", &self.kind)
            .field("beta", &self.beta)
            .field("dim", &self.j.dim())
            .finish()
    }
}

impl NonreversibleFlow {
    pub fn new(kind: FlowKind, j: SkewMatrix, beta: f64, target: Arc<dyn TargetDistribution>) -> Result<Self> {
        check_dim(target.dim(), j.dim())?;
        if !beta.is_finite() {
            return Err(Error::param("beta must be finite"));
        }
        match kind {
            FlowKind::LogGrad => {}
            FlowKind::Power { alpha, ell_ref } => {
                if !(alpha > 0.0 && alpha.is_finite() && ell_ref.is_finite()) {
                    return Err(Error::param("power flow needs a positive alpha and finite ell_ref"));
                }
            }
            FlowKind::Compact { lo, hi, ell_ref } => {
                if !(lo >= 0.0 && hi > lo && hi.is_finite() && ell_ref.is_finite()) {
                    return Err(Error::param("compact flow needs 0 <= lo < hi and finite ell_ref"));
                }
            }
        }
        Ok(Self { kind, j, beta, target })
    }

    pub fn log_grad(j: SkewMatrix, beta: f64, target: Arc<dyn TargetDistribution>) -> Result<Self> {
        Self::new(FlowKind::LogGrad, j, beta, target)
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn skew(&self) -> &SkewMatrix {
        &self.j
    }

    pub fn target(&self) -> &Arc<dyn TargetDistribution> {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.j.dim()
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..self.clone() }
    }

    /// (density, gradient) evaluations used by one call to `evaluate`.
    pub fn cost_per_eval(&self) -> (u64, u64) {
        if self.beta == 0.0 {
            return (0, 0);
        }
        match self.kind {
            FlowKind::LogGrad => (0, 1),
            FlowKind::Power { .. } | FlowKind::Compact { .. } => (1, 1),
        }
    }

    /// G with γ(x) = Gx, when the flow is linear (log_grad on a Gaussian).
    pub fn linear_matrix(&self) -> Option<DMatrix<f64>> {
        match self.kind {
            FlowKind::LogGrad => self
                .target
                .gaussian_precision()
                .map(|p| -(self.j.matrix() * p) * self.beta),
            _ => None,
        }
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.evaluate_unchecked(x))
    }

    pub(crate) fn evaluate_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.beta == 0.0 {
            return DVector::zeros(x.len());
        }
        let (weight, grad) = match self.kind {
            FlowKind::LogGrad => (1.0, self.target.grad_log_density_unchecked(x)),
            FlowKind::Power { alpha, ell_ref } => {
                let (ell, g) = self.target.value_and_grad_unchecked(x);
                (alpha * (alpha * (ell - ell_ref)).exp(), g)
            }
            FlowKind::Compact { lo, hi, ell_ref } => {
                let (ell, g) = self.target.value_and_grad_unchecked(x);
                (bump((ell - ell_ref).exp(), lo, hi), g)
            }
        };
        if weight == 0.0 {
            return DVector::zeros(x.len());
        }
        self.j.matrix() * grad * (self.beta * weight)
    }
}

/// Max over `points` of |∇·(π̃γ)(x)| / π̃(x), by central differences of step `h`.
pub fn check_divergence_free(flow: &NonreversibleFlow, points: &[DVector<f64>], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::param("finite-difference step must be positive"));
    }
    let target = flow.target();
    let mut worst: f64 = 0.0;
    for x in points {
        let ell0 = target.log_density(x)?;
        let mut div = 0.0;
        for i in 0..x.len() {
            let side = |sign: f64| -> Result<f64> {
                let mut y = x.clone();
                y[i] += sign * h;
                let w = (target.log_density(&y)? - ell0).exp();
                Ok(w * flow.evaluate(&y)?[i])
            };
            div += (side(1.0)? - side(-1.0)?) / (2.0 * h);
        }
        worst = worst.max(div.abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_is_compact_and_peaks_at_midpoint() {
        assert_eq!(bump(0.0, 1.0, 3.0), 0.0);
        assert_eq!(bump(3.5, 1.0, 3.0), 0.0);
        assert_eq!(bump(2.0, 1.0, 3.0), 1.0);
        assert!(bump(1.5, 1.0, 3.0) > 0.0 && bump(1.5, 1.0, 3.0) < 1.0);
    }

    #[test]
    fn from_matrix_rejects_non_skew() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(SkewMatrix::from_matrix(m).is_err());
    }
}
