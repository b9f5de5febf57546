//! Subcommand implementations.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nrlangevin_core::diagnostics::{mse_of_averages, quadrature_reference, Box2};
use nrlangevin_core::experiments::{
    best_by_ess, find_mode, median, reference_means, run_ess_point, EssPoint, RunPlan, SamplerSpec, SweepPoint,
};
use nrlangevin_core::gaussian_analysis::{
    invariant_covariance_bias, mse_model, numerical_asymptotic_variance, numerical_invariant_covariance,
    one_step_matrices,
};
use nrlangevin_core::splitting::{derive_seed, observables, run_chain_with, Observable};
use nrlangevin_core::targets::data::{bin_points, load_pima, load_points, synthetic_pima, synthetic_pine};
use nrlangevin_core::{
    make_permutation_skew, make_rotation_2d, ChainResult, CoxParams, GaussianTarget, KernelKind, LinearModel,
    LogGaussianCoxTarget, LogisticRegressionTarget, RunOptions, SkewMatrix, TargetDistribution, WarpedGaussianTarget,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ExperimentKind, IngestConfig, IngestKind, ObservableSpec, TargetKind};
use crate::error::CliError;
use crate::output::{num, opt, OutDir, Table};

const PIMA_ROWS: usize = 768;

/// Result of a finished command: the summary document and whether every
/// computation failed numerically.
pub struct Report {
    pub summary: Value,
    pub all_failed: bool,
}

struct Problem {
    target: Arc<dyn TargetDistribution>,
    x0: DVector<f64>,
    js: Vec<(u64, SkewMatrix)>,
    info: Value,
}

fn build_problem(cfg: &ExperimentConfig) -> Result<Problem, CliError> {
    let t = &cfg.target;
    let (target, info): (Arc<dyn TargetDistribution>, Value) = match cfg.target_kind()? {
        TargetKind::Gaussian => (Arc::new(GaussianTarget::isotropic(t.dim, t.alpha)?), json!({"kind": "gaussian"})),
        TargetKind::Warped => (Arc::new(WarpedGaussianTarget::new(t.b)?), json!({"kind": "warped"})),
        TargetKind::Logistic => {
            let (table, source) = match &t.data {
                Some(p) => (load_pima(p)?, p.display().to_string()),
                None => (synthetic_pima(t.synthetic_seed), format!("synthetic (seed {})", t.synthetic_seed)),
            };
            let rows = table.response.len();
            let design = table.standardized_design()?;
            let target = LogisticRegressionTarget::with_isotropic_prior(design, table.response, t.prior_variance)?;
            (Arc::new(target), json!({"kind": "logistic", "source": source, "rows": rows}))
        }
        TargetKind::Cox => {
            let (pts, source) = match &t.points {
                Some(p) => (load_points(p)?, p.display().to_string()),
                None => (synthetic_pine(t.synthetic_seed), format!("synthetic (seed {})", t.synthetic_seed)),
            };
            if t.grid > 32 {
                eprintln!("warning: a {0}x{0} grid has dimension {1}; setup and sampling are slow", t.grid, t.grid * t.grid);
            }
            let counts = bin_points(&pts, t.grid);
            let params = CoxParams { sigma2: t.sigma2, corr_scale: t.corr_scale, mean: t.mean };
            let target = LogGaussianCoxTarget::new(t.grid, &counts, params)?;
            let info = json!({"kind": "cox", "source": source, "points": pts.len(), "prior_mean": target.prior_mean()});
            (Arc::new(target), info)
        }
    };
    let d = target.dim();
    let x0 = match &t.x0 {
        Some(v) if v.len() != d => {
            return Err(CliError::Config(format!("target.x0 has length {}, target dimension is {d}", v.len())))
        }
        Some(v) => DVector::from_vec(v.clone()),
        None => match cfg.target_kind()? {
            TargetKind::Warped => DVector::from_vec(vec![0.0, 5.0]),
            TargetKind::Gaussian => DVector::zeros(d),
            TargetKind::Logistic => find_mode(target.as_ref(), &DVector::zeros(d), 10_000)?,
            TargetKind::Cox => find_mode(target.as_ref(), &DVector::zeros(d), 20_000)?,
        },
    };
    let js = t
        .skew_seeds
        .iter()
        .map(|&s| Ok((s, if d == 2 { make_rotation_2d() } else { make_permutation_skew(d, s)? })))
        .collect::<Result<_, CliError>>()?;
    Ok(Problem { target, x0, js, info })
}

/// Sweep points in run order, one block per kernel.
fn schedule(cfg: &ExperimentConfig) -> Vec<(KernelKind, SweepPoint)> {
    let kernels = if cfg.sweep.kernels.is_empty() { vec![cfg.sampler.kernel] } else { cfg.sweep.kernels.clone() };
    let points = cfg.sweep.resolved_points();
    kernels.iter().flat_map(|&k| points.iter().map(move |&p| (k, p))).collect()
}

/// Serialized name of a unit enum variant.
fn enum_name<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn point_file(gi: usize) -> String {
    format!("point_{gi:03}.csv")
}

/// Builds every sampler once so that invalid settings fail before any run.
fn check_samplers(cfg: &ExperimentConfig, problem: &Problem) -> Result<(), CliError> {
    for (kernel, p) in schedule(cfg) {
        let spec = cfg.sampler.with_kernel(kernel);
        let sampler = spec.build(problem.target.clone(), problem.js[0].1.clone(), p.dt, p.beta, &problem.x0)?;
        if sampler.steps_for_budget(cfg.budget)? == 0 {
            return Err(CliError::Config(format!("budget {} is below the cost of one step", cfg.budget)));
        }
    }
    Ok(())
}

pub fn run_experiment(cfg: &ExperimentConfig, out: &OutDir) -> Result<Report, CliError> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    check_samplers(cfg, &problem)?;
    out.json("config.json", cfg)?;
    let mut report = match cfg.experiment {
        ExperimentKind::Warped => warped(cfg, &problem, out)?,
        ExperimentKind::Logistic | ExperimentKind::Cox => ess_study(cfg, &problem, out)?,
        ExperimentKind::Sample => sample(cfg, &problem, out)?,
        ExperimentKind::GaussianAnalysis => {
            return Err(CliError::Config("use the gaussian-analysis subcommand for this config".into()))
        }
    };
    report.summary["target"] = problem.info;
    report.summary["config"] = serde_json::to_value(cfg)?;
    out.json("summary.json", &report.summary)?;
    Ok(report)
}

fn observable(spec: ObservableSpec, d: usize) -> Result<Observable, CliError> {
    let check = |i: usize| {
        if i < d {
            Ok(i)
        } else {
            Err(CliError::Config(format!("observable index {i} out of range for dimension {d}")))
        }
    };
    Ok(match spec {
        ObservableSpec::SquaredNorm => observables::squared_norm(),
        ObservableSpec::Coordinate { index } => observables::coordinate(check(index)?),
        ObservableSpec::SquaredCoordinate { index } => observables::squared_coordinate(check(index)?),
    })
}

fn run_replicas(
    cfg: &ExperimentConfig,
    problem: &Problem,
    kernel: KernelKind,
    p: SweepPoint,
    gi: usize,
    obs: &[Observable],
    opts: RunOptions,
) -> Result<(usize, Vec<(u64, ChainResult)>), CliError> {
    let spec = cfg.sampler.with_kernel(kernel);
    let sampler = spec.build(problem.target.clone(), problem.js[0].1.clone(), p.dt, p.beta, &problem.x0)?;
    let n = sampler.steps_for_budget(cfg.budget)?;
    let results = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, gi as u64, r);
            run_chain_with(&sampler, &problem.x0, n, obs, seed, opts).map(|res| (seed, res))
        })
        .collect::<nrlangevin_core::Result<Vec<_>>>()?;
    Ok((n, results))
}

fn warped(cfg: &ExperimentConfig, problem: &Problem, out: &OutDir) -> Result<Report, CliError> {
    let f = observable(cfg.observable, problem.target.dim())?;
    let reference = cfg.reference.clone().unwrap_or_default();
    let f_ref = match reference.value {
        Some(v) => v,
        None => {
            let q = quadrature_reference(problem.target.as_ref(), &*f, Box2::warped_default(), reference.tol)?;
            q.value
        }
    };
    let mut index = Table::new(&[
        "point", "kernel", "dt", "beta", "n_steps", "density_evals", "gradient_evals", "acceptance", "n_invalid", "mse",
        "bias2", "variance", "file",
    ]);
    let mut best: [Option<(f64, usize)>; 2] = [None, None];
    for (gi, (kernel, p)) in schedule(cfg).into_iter().enumerate() {
        let opts = RunOptions { store_series: false, store_samples: false };
        let (n, results) = run_replicas(cfg, problem, kernel, p, gi, std::slice::from_ref(&f), opts)?;
        let mut table = Table::new(&[
            "replica", "seed", "n_steps", "n_completed", "density_evals", "gradient_evals", "acceptance", "average", "failure",
        ]);
        for (r, (seed, res)) in results.iter().enumerate() {
            table.push(vec![
                r.to_string(),
                seed.to_string(),
                n.to_string(),
                res.n_completed.to_string(),
                res.budget.density.to_string(),
                res.budget.gradient.to_string(),
                num(res.acceptance_rate()),
                if res.is_valid() { num(res.average(0)) } else { String::new() },
                res.failure.clone().unwrap_or_default(),
            ]);
        }
        out.table(&point_file(gi), &table)?;
        let invalid = results.iter().filter(|(_, r)| !r.is_valid()).count();
        let mse = if invalid == 0 {
            let avgs: Vec<f64> = results.iter().map(|(_, r)| r.average(0)).collect();
            Some(mse_of_averages(&avgs, f_ref)?)
        } else {
            None
        };
        if let Some(m) = mse {
            let slot = &mut best[(p.beta != 0.0) as usize];
            if slot.is_none_or(|(v, _)| m.mse < v) {
                *slot = Some((m.mse, gi));
            }
        }
        let acc = results.iter().map(|(_, r)| r.acceptance_rate()).sum::<f64>() / results.len() as f64;
        let b = results[0].1.budget;
        index.push(vec![
            gi.to_string(),
            enum_name(&kernel),
            num(p.dt),
            num(p.beta),
            n.to_string(),
            b.density.to_string(),
            b.gradient.to_string(),
            num(acc),
            invalid.to_string(),
            opt(mse.map(|m| m.mse)),
            opt(mse.map(|m| m.bias2)),
            opt(mse.map(|m| m.variance)),
            point_file(gi),
        ]);
    }
    out.table("index.csv", &index)?;
    let entry = |b: Option<(f64, usize)>| b.map(|(mse, gi)| json!({"point": gi, "mse": mse}));
    let ratio = match best {
        [Some((m0, _)), Some((m1, _))] => Some(m0 / m1),
        _ => None,
    };
    Ok(Report {
        summary: json!({
            "experiment": "warped",
            "reference": f_ref,
            "points": index.len(),
            "best_reversible": entry(best[0]),
            "best_nonreversible": entry(best[1]),
            "mse_improvement": ratio,
        }),
        all_failed: best.iter().all(Option::is_none),
    })
}

fn ess_study(cfg: &ExperimentConfig, problem: &Problem, out: &OutDir) -> Result<Report, CliError> {
    let d = problem.target.dim();
    let plan = RunPlan {
        target: problem.target.clone(),
        spec: cfg.sampler,
        x0: problem.x0.clone(),
        budget: cfg.budget,
        replicas: cfg.replicas,
        seed: cfg.seed,
    };
    let reference = match &cfg.reference {
        Some(r) => {
            let point = SweepPoint { dt: r.dt.expect("validated"), beta: r.beta };
            let means = reference_means(&RunPlan { budget: r.budget, ..plan.clone() }, &problem.js[0].1, point)?;
            let mut table = Table::new(&["coordinate", "mean"]);
            for (i, m) in means.iter().enumerate() {
                table.push(vec![i.to_string(), num(*m)]);
            }
            out.table("reference.csv", &table)?;
            Some(means)
        }
        None => None,
    };
    let js: Vec<SkewMatrix> = problem.js.iter().map(|(_, j)| j.clone()).collect();
    let mut index = Table::new(&[
        "point", "kernel", "dt", "beta", "n_steps", "density_evals", "gradient_evals", "acceptance", "n_valid", "n_invalid",
        "n_flagged", "median_ess", "min_ess", "covered_coordinates", "file",
    ]);
    let mut points: Vec<(usize, EssPoint)> = Vec::new();
    for (gi, (kernel, p)) in schedule(cfg).into_iter().enumerate() {
        let plan = RunPlan { spec: SamplerSpec { kernel, ..cfg.sampler }, ..plan.clone() };
        let res = run_ess_point(&plan, &js, p, gi as u64)?;
        let mut table = Table::new(&["skew_seed", "replica", "coordinate", "mean", "ci_lower", "ci_upper", "ess"]);
        for (c, &(ji, r)) in res.chain_ids.iter().enumerate() {
            for i in 0..d {
                table.push(vec![
                    problem.js[ji].0.to_string(),
                    r.to_string(),
                    i.to_string(),
                    num(res.means[c][i]),
                    num(res.intervals[c][i].0),
                    num(res.intervals[c][i].1),
                    num(res.ess[c][i]),
                ]);
            }
        }
        out.table(&point_file(gi), &table)?;
        let mean_ess = res.mean_ess();
        let covered = reference
            .as_ref()
            .filter(|_| !res.intervals.is_empty())
            .map(|r| res.coverage(r).iter().filter(|&&c| c >= 0.5).count().to_string())
            .unwrap_or_default();
        index.push(vec![
            gi.to_string(),
            enum_name(&kernel),
            num(p.dt),
            num(p.beta),
            res.n_steps.to_string(),
            res.budget_per_chain.density.to_string(),
            res.budget_per_chain.gradient.to_string(),
            num(res.acceptance),
            res.ess.len().to_string(),
            res.n_invalid.to_string(),
            res.n_flagged.to_string(),
            if mean_ess.is_empty() { String::new() } else { num(res.median_ess()) },
            opt(mean_ess.iter().cloned().reduce(f64::min)),
            covered,
            point_file(gi),
        ]);
        points.push((gi, res));
    }
    out.table("index.csv", &index)?;

    let (rev, nonrev): (Vec<_>, Vec<_>) = points.into_iter().partition(|(_, p)| p.beta == 0.0);
    let best = |set: &[(usize, EssPoint)]| {
        let pts: Vec<EssPoint> = set.iter().map(|(_, p)| p.clone()).collect();
        best_by_ess(&pts).and_then(|b| set.iter().find(|(_, p)| p == b).cloned())
    };
    let (b0, b1) = (best(&rev), best(&nonrev));
    let describe = |b: &Option<(usize, EssPoint)>| {
        b.as_ref().map(|(gi, p)| json!({"point": gi, "dt": p.dt, "beta": p.beta, "median_ess": p.median_ess()}))
    };
    let per_j = b1.as_ref().map(|(_, p)| {
        problem
            .js
            .iter()
            .enumerate()
            .map(|(ji, (seed, _))| {
                let ess: Vec<f64> = p
                    .chain_ids
                    .iter()
                    .zip(&p.ess)
                    .filter(|((j, _), _)| *j == ji)
                    .flat_map(|(_, e)| e.iter().cloned())
                    .collect();
                json!({"skew_seed": seed, "median_ess": if ess.is_empty() { None } else { Some(median(&ess)) }})
            })
            .collect::<Vec<_>>()
    });
    let (ratio, cell_ratio) = match (&b0, &b1) {
        (Some((_, p0)), Some((_, p1))) => {
            let r: Vec<f64> = p1.mean_ess().iter().zip(p0.mean_ess()).map(|(a, b)| a / b).collect();
            (Some(p1.median_ess() / p0.median_ess()), Some(median(&r)))
        }
        _ => (None, None),
    };
    Ok(Report {
        summary: json!({
            "experiment": enum_name(&cfg.experiment),
            "dimension": d,
            "points": index.len(),
            "reference_means": reference,
            "best_reversible": describe(&b0),
            "best_nonreversible": describe(&b1),
            "median_ess_ratio": ratio,
            "median_per_coordinate_ess_ratio": cell_ratio,
            "best_nonreversible_by_skew_seed": per_j,
        }),
        all_failed: b0.is_none() && b1.is_none(),
    })
}

fn sample(cfg: &ExperimentConfig, problem: &Problem, out: &OutDir) -> Result<Report, CliError> {
    let d = problem.target.dim();
    let mut index = Table::new(&[
        "point", "kernel", "dt", "beta", "n_steps", "density_evals", "gradient_evals", "acceptance", "n_invalid", "file",
    ]);
    let mut header = vec!["replica".to_string(), "step".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut any_valid = false;
    for (gi, (kernel, p)) in schedule(cfg).into_iter().enumerate() {
        let opts = RunOptions { store_series: false, store_samples: true };
        let (n, results) = run_replicas(cfg, problem, kernel, p, gi, &[], opts)?;
        let mut table = Table::new(&header);
        for (r, (_, res)) in results.iter().enumerate() {
            for (step, x) in res.samples.iter().flatten().enumerate().step_by(cfg.output.thin) {
                let mut row = vec![r.to_string(), step.to_string()];
                row.extend(x.iter().map(|&v| num(v)));
                table.push(row);
            }
        }
        out.table(&point_file(gi), &table)?;
        let invalid = results.iter().filter(|(_, r)| !r.is_valid()).count();
        any_valid |= invalid < results.len();
        let acc = results.iter().map(|(_, r)| r.acceptance_rate()).sum::<f64>() / results.len() as f64;
        let b = results[0].1.budget;
        index.push(vec![
            gi.to_string(),
            enum_name(&kernel),
            num(p.dt),
            num(p.beta),
            n.to_string(),
            b.density.to_string(),
            b.gradient.to_string(),
            num(acc),
            invalid.to_string(),
            point_file(gi),
        ]);
    }
    out.table("index.csv", &index)?;
    Ok(Report {
        summary: json!({"experiment": "sample", "points": index.len(), "x0": problem.x0.as_slice()}),
        all_failed: !any_valid,
    })
}

pub fn run_gaussian_analysis(cfg: &ExperimentConfig, out: &OutDir) -> Result<Report, CliError> {
    if cfg.experiment != ExperimentKind::GaussianAnalysis {
        return Err(CliError::Config("gaussian-analysis needs \"experiment\": \"gaussian_analysis\"".into()));
    }
    cfg.validate()?;
    out.json("config.json", cfg)?;
    let a = &cfg.analysis;
    let m = match a.observable_m {
        Some(rows) => DMatrix::from_fn(2, 2, |i, j| rows[i][j]),
        None => DMatrix::identity(2, 2),
    };
    let lvec = DVector::zeros(2);
    let mut table = Table::new(&[
        "alpha", "beta", "dt", "p", "mode", "ordering", "status", "cov_error_2norm", "k11", "asymptotic_variance", "mse_model",
    ]);
    let mut flagged = 0;
    for &alpha in &a.alpha {
        for &beta in &a.beta {
            for &dt in &a.dt {
                for &p in &a.p {
                    for &mode in &a.mode {
                        for &ordering in &a.ordering {
                            let model = LinearModel::isotropic(alpha, beta, dt, p, mode, ordering)?;
                            let mut status = "ok".to_string();
                            let mut cells = [None; 4];
                            match invariant_covariance_bias(&model) {
                                Ok(bias) => {
                                    let k = numerical_invariant_covariance(&one_step_matrices(&model)?)?;
                                    cells[0] = bias.singular_values().max().into();
                                    cells[1] = Some(k[(0, 0)]);
                                    match numerical_asymptotic_variance(&model, &m, &lvec, a.convention) {
                                        Ok(var) => {
                                            cells[2] = Some(var);
                                            cells[3] = Some(mse_model((&bias * &m).trace(), var, a.horizon)?);
                                        }
                                        Err(e) if e.is_numerical() => status = e.to_string(),
                                        Err(e) => return Err(e.into()),
                                    }
                                }
                                Err(e) if e.is_numerical() => status = e.to_string(),
                                Err(e) => return Err(e.into()),
                            }
                            flagged += (status != "ok") as usize;
                            table.push(vec![
                                num(alpha),
                                num(beta),
                                num(dt),
                                p.to_string(),
                                enum_name(&mode),
                                enum_name(&ordering),
                                status,
                                opt(cells[0]),
                                opt(cells[1]),
                                opt(cells[2]),
                                opt(cells[3]),
                            ]);
                        }
                    }
                }
            }
        }
    }
    out.table("gaussian_analysis.csv", &table)?;
    let rows = table.len();
    let summary = json!({
        "experiment": "gaussian_analysis",
        "rows": rows,
        "flagged_rows": flagged,
        "config": serde_json::to_value(cfg)?,
    });
    out.json("summary.json", &summary)?;
    Ok(Report { summary, all_failed: flagged == rows })
}

pub fn run_ingest(cfg: &IngestConfig, out: &OutDir) -> Result<Report, CliError> {
    out.json("config.json", cfg)?;
    let summary = match cfg.kind {
        IngestKind::Pima => {
            let table = load_pima(&cfg.path)?;
            let rows = table.response.len();
            let expected = cfg.expected.unwrap_or(PIMA_ROWS);
            if rows != expected {
                return Err(CliError::Data(format!("{}: expected {expected} rows, found {rows}", cfg.path.display())));
            }
            let design = table.standardized_design()?;
            let (m, k) = design.shape();
            let mut header = vec!["intercept".to_string()];
            header.extend((1..k).map(|j| format!("x{j}")));
            header.push("y".into());
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let mut t = Table::new(&header);
            for i in 0..m {
                let mut row: Vec<String> = design.row(i).iter().map(|&v| num(v)).collect();
                row.push(num(table.response[i]));
                t.push(row);
            }
            out.table("design.csv", &t)?;
            json!({"kind": "pima", "rows": m, "columns": k, "positive_fraction": table.response.mean()})
        }
        IngestKind::Pine => {
            let pts = load_points(&cfg.path)?;
            if let Some(expected) = cfg.expected {
                if pts.len() != expected {
                    return Err(CliError::Data(format!(
                        "{}: expected {expected} points, found {}",
                        cfg.path.display(),
                        pts.len()
                    )));
                }
            }
            let counts = bin_points(&pts, cfg.grid);
            let total: u64 = counts.iter().map(|&c| c as u64).sum();
            if total != pts.len() as u64 {
                return Err(CliError::Data(format!("binned total {total} differs from point count {}", pts.len())));
            }
            let mut t = Table::new(&["row", "col", "count"]);
            for (idx, c) in counts.iter().enumerate() {
                t.push(vec![(idx / cfg.grid).to_string(), (idx % cfg.grid).to_string(), c.to_string()]);
            }
            out.table("counts.csv", &t)?;
            json!({"kind": "pine", "points": pts.len(), "grid": cfg.grid, "total": total})
        }
    };
    let summary = json!({"ingest": summary, "config": serde_json::to_value(cfg)?});
    out.json("summary.json", &summary)?;
    Ok(Report { summary, all_failed: false })
}
