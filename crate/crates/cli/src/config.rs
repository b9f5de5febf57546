//! Experiment configuration: parsing, defaults and validation.

use std::path::{Path, PathBuf};

use nrlangevin_core::experiments::{SamplerSpec, SweepPoint};
use nrlangevin_core::{KernelKind, Ordering, ReversibleMode, VarianceConvention};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    GaussianAnalysis,
    Warped,
    Logistic,
    Cox,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Gaussian,
    Warped,
    Logistic,
    Cox,
}

/// Observable whose ergodic average is estimated in the warped study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservableSpec {
    #[default]
    SquaredNorm,
    Coordinate { index: usize },
    SquaredCoordinate { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    /// Required for `sample`; implied by the other experiments.
    pub kind: Option<TargetKind>,
    /// Start point; defaults to (0, 5) for the warped target and to the
    /// posterior mode for logistic and Cox targets.
    pub x0: Option<Vec<f64>>,
    pub dim: usize,
    pub alpha: f64,
    pub b: f64,
    /// Pima-style CSV (8 covariates and a 0/1 outcome); synthetic when absent.
    pub data: Option<PathBuf>,
    /// Point coordinates in [0, 1]²; synthetic when absent.
    pub points: Option<PathBuf>,
    pub synthetic_seed: u64,
    pub prior_variance: f64,
    pub grid: usize,
    pub allow_large_grid: bool,
    pub sigma2: f64,
    pub corr_scale: f64,
    pub mean: Option<f64>,
    /// Seeds of the random skew matrices; replicas run for each.
    pub skew_seeds: Vec<u64>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            kind: None,
            x0: None,
            dim: 2,
            alpha: 1.0,
            b: 0.05,
            data: None,
            points: None,
            synthetic_seed: 2024,
            prior_variance: 100.0,
            grid: 16,
            allow_large_grid: false,
            sigma2: 1.91,
            corr_scale: 1.0 / 33.0,
            mean: None,
            skew_seeds: vec![1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Explicit (Δt, β) pairs.
    pub points: Vec<SweepPoint>,
    /// Cartesian grid, appended after `points`.
    pub dt: Vec<f64>,
    pub beta: Vec<f64>,
    /// Reversible kernels to compare; defaults to the sampler's kernel.
    pub kernels: Vec<KernelKind>,
}

impl SweepConfig {
    pub fn resolved_points(&self) -> Vec<SweepPoint> {
        let mut pts = self.points.clone();
        pts.extend(nrlangevin_core::experiments::grid(&self.dt, &self.beta));
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Known value of the warped-study expectation; quadrature when absent.
    pub value: Option<f64>,
    pub tol: f64,
    /// Long-run density-evaluation budget (logistic, cox).
    pub budget: u64,
    pub dt: Option<f64>,
    pub beta: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { value: None, tol: 1e-6, budget: 10_000_000, dt: None, beta: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub dt: Vec<f64>,
    pub p: Vec<usize>,
    pub mode: Vec<ReversibleMode>,
    pub ordering: Vec<Ordering>,
    /// f(x) = xᵀMx; identity when absent.
    pub observable_m: Option<[[f64; 2]; 2]>,
    pub horizon: f64,
    pub convention: VarianceConvention,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            alpha: vec![1.0],
            beta: vec![1.0],
            dt: vec![0.1],
            p: vec![1],
            mode: vec![ReversibleMode::Exact],
            ordering: vec![Ordering::NonreversibleFirst],
            observable_m: None,
            horizon: 1e3,
            convention: VarianceConvention::GreenKubo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: String,
    /// Keep every n-th state in `sample` trajectories.
    pub thin: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), format: "csv".into(), thin: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub observable: ObservableSpec,
    #[serde(default)]
    pub reference: Option<ReferenceConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_replicas() -> usize {
    20
}

fn default_budget() -> u64 {
    3500
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.target.data = cfg.target.data.map(|p| base.join(p));
        cfg.target.points = cfg.target.points.map(|p| base.join(p));
        Ok(cfg)
    }

    pub fn target_kind(&self) -> Result<TargetKind, CliError> {
        let implied = match self.experiment {
            ExperimentKind::Warped => Some(TargetKind::Warped),
            ExperimentKind::Logistic => Some(TargetKind::Logistic),
            ExperimentKind::Cox => Some(TargetKind::Cox),
            ExperimentKind::Sample | ExperimentKind::GaussianAnalysis => None,
        };
        match (implied, self.target.kind) {
            (Some(a), Some(b)) if a != b => {
                Err(CliError::Config(format!("target.kind {b:?} conflicts with experiment {:?}", self.experiment)))
            }
            (Some(a), _) | (None, Some(a)) => Ok(a),
            (None, None) => Ok(TargetKind::Warped),
        }
    }

    /// Checks everything that can be checked without data or numerics.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.output.format != "csv" {
            return Err(CliError::Config(format!("output.format must be \"csv\", got {:?}", self.output.format)));
        }
        if self.output.thin == 0 {
            return Err(CliError::Config("output.thin must be at least 1".into()));
        }
        if self.experiment == ExperimentKind::GaussianAnalysis {
            return self.validate_analysis();
        }
        if self.replicas == 0 {
            return Err(CliError::Config("replicas must be at least 1".into()));
        }
        if self.budget == 0 {
            return Err(CliError::Config("budget must be positive".into()));
        }
        if self.experiment == ExperimentKind::Warped && self.replicas < 2 {
            return Err(CliError::Config("the warped study needs at least 2 replicas".into()));
        }
        let points = self.sweep.resolved_points();
        if points.is_empty() {
            return Err(CliError::Config("sweep has no (dt, beta) points".into()));
        }
        for p in &points {
            positive("sweep dt", p.dt)?;
            if !p.beta.is_finite() {
                return Err(CliError::Config(format!("sweep beta must be finite, got {}", p.beta)));
            }
        }
        if self.sweep.kernels.iter().chain([&self.sampler.kernel]).any(|k| !k.is_metropolized()) {
            return Err(CliError::Config("experiments need a Metropolized kernel (mala, rwmh, mala_barker)".into()));
        }
        let kind = self.target_kind()?;
        let t = &self.target;
        if t.skew_seeds.is_empty() {
            return Err(CliError::Config("target.skew_seeds must not be empty".into()));
        }
        match kind {
            TargetKind::Gaussian => {
                positive("target.alpha", t.alpha)?;
                if t.dim < 2 {
                    return Err(CliError::Config("target.dim must be at least 2".into()));
                }
            }
            TargetKind::Warped => positive("target.b", t.b)?,
            TargetKind::Logistic => positive("target.prior_variance", t.prior_variance)?,
            TargetKind::Cox => {
                positive("target.sigma2", t.sigma2)?;
                positive("target.corr_scale", t.corr_scale)?;
                if t.grid < 2 {
                    return Err(CliError::Config("target.grid must be at least 2".into()));
                }
                if t.grid > 32 && !t.allow_large_grid {
                    return Err(CliError::Config(format!(
                        "target.grid {} needs target.allow_large_grid = true (the prior factorization is O(n^6))",
                        t.grid
                    )));
                }
            }
        }
        if let Some(r) = &self.reference {
            positive("reference.tol", r.tol)?;
            if r.budget == 0 {
                return Err(CliError::Config("reference.budget must be positive".into()));
            }
            if let Some(dt) = r.dt {
                positive("reference.dt", dt)?;
            }
            if matches!(kind, TargetKind::Logistic | TargetKind::Cox) && r.dt.is_none() {
                return Err(CliError::Config("reference.dt is required for a long reference run".into()));
            }
        }
        Ok(())
    }

    fn validate_analysis(&self) -> Result<(), CliError> {
        let a = &self.analysis;
        let lists = [("alpha", a.alpha.len()), ("beta", a.beta.len()), ("dt", a.dt.len()), ("p", a.p.len())];
        if let Some((name, _)) = lists.iter().find(|(_, n)| *n == 0) {
            return Err(CliError::Config(format!("analysis.{name} must not be empty")));
        }
        if a.mode.is_empty() || a.ordering.is_empty() {
            return Err(CliError::Config("analysis.mode and analysis.ordering must not be empty".into()));
        }
        for &v in &a.alpha {
            positive("analysis.alpha", v)?;
        }
        for &v in &a.dt {
            positive("analysis.dt", v)?;
        }
        if a.beta.iter().any(|b| !b.is_finite()) {
            return Err(CliError::Config("analysis.beta must be finite".into()));
        }
        if a.p.contains(&0) {
            return Err(CliError::Config("analysis.p must be at least 1".into()));
        }
        positive("analysis.horizon", a.horizon)?;
        if let Some(m) = a.observable_m {
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(CliError::Config("analysis.observable_m must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestKind {
    Pima,
    Pine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub kind: IngestKind,
    pub path: PathBuf,
    /// Expected number of rows (pima) or points (pine).
    #[serde(default)]
    pub expected: Option<usize>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_grid() -> usize {
    16
}

impl IngestConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.path = path.parent().unwrap_or(Path::new(".")).join(&cfg.path);
        if cfg.grid < 1 {
            return Err(CliError::Config("grid must be at least 1".into()));
        }
        Ok(cfg)
    }
}
