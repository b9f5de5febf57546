//! Nonreversible Langevin samplers built from a Lie–Trotter splitting of a
//! reversible Metropolized kernel and a divergence-free flow, together with
//! an exact analysis toolkit for Gaussian targets.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod flows;
pub mod gaussian_analysis;
pub mod kernels;
pub mod linalg;
pub mod ode;
pub mod splitting;
pub mod targets;

pub use error::{Error, Result};
pub use flows::{make_permutation_skew, make_rotation_2d, FlowKind, NonreversibleFlow, SkewMatrix};
pub use gaussian_analysis::{LinearModel, ModifiedSDE, OneStepAffine, ReversibleMode, VarianceConvention};
pub use kernels::{ChainState, KernelKind, KernelStepRecord, NoiseConvention, ReversibleKernel};
pub use ode::{FlowIntegrator, IntegratorMethod};
pub use splitting::{Budget, ChainResult, Observable, Ordering, RunOptions, SplittingConfig};
pub use targets::{
    CoxParams, GaussianTarget, LogGaussianCoxTarget, LogisticRegressionTarget, TargetDistribution,
    WarpedGaussianTarget,
};

pub use nalgebra::{DMatrix, DVector};
