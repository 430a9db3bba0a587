//! Validation-based hyperparameter selection, test RMSE, and the synthetic
//! comparison benchmark.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{lasso_cd_from, pregroup_mtl_baseline, response_correlation_groups, LassoOptions};
use crate::data::{Hyperparams, ParamMatrix, SparsityMode, TaskDataset};
use crate::error::{Error, Result};
use crate::path::{cluster_count, log_space};
use crate::solver::{fit_from_state, ProximalDecomposition, SolverConfig};
use crate::synth::{generate, SynthSpec};
use crate::weights::{knn_weights, WeightGraph};

/// κ values of the robustness sweep.
pub const KAPPA_SWEEP: [usize; 5] = [2, 3, 4, 5, 6];

/// Once every column agrees within this normalized distance, larger λ2
/// values cannot change the solution, so the λ2 sweep stops early.
const FUSED_TOL: f64 = 1e-6;

/// Root-mean-squared residual pooled over every row of every task.
pub fn rmse(theta: &ParamMatrix, data: &TaskDataset) -> Result<f64> {
    theta.check_shape(data.p(), data.k())?;
    let mut ss = 0.0;
    for (s, t) in data.tasks().iter().enumerate() {
        ss += (&t.y - &t.x * theta.column(s)).norm_squared();
    }
    Ok((ss / data.total_rows() as f64).sqrt())
}

/// `max_s ||X_s^T y_s||_inf / n_s`, the scale of the default λ1 grid.
pub fn lambda_scale(data: &TaskDataset) -> f64 {
    data.tasks()
        .iter()
        .map(|t| t.x.tr_mul(&t.y).amax() / t.n() as f64)
        .fold(0.0, f64::max)
}

/// Ten log-spaced values over `[0.01, 10] * lambda_scale`.
pub fn default_lambda1_grid(data: &TaskDataset) -> Vec<f64> {
    let c = positive_or_one(lambda_scale(data));
    log_space(0.01 * c, 10.0 * c, 10)
}

/// Zero followed by `points - 1` log-spaced values over
/// `[1e-3, 10] * max_s ||X_s^T y_s||_inf`.
pub fn default_lambda2_grid(data: &TaskDataset, points: usize) -> Vec<f64> {
    let c = positive_or_one(data.tasks().iter().map(|t| t.x.tr_mul(&t.y).amax()).fold(0.0, f64::max));
    let mut grid = vec![0.0];
    if points > 1 {
        grid.extend(log_space(1e-3 * c, 10.0 * c, points - 1));
    }
    grid
}

fn positive_or_one(c: f64) -> f64 {
    if c > 0.0 && c.is_finite() {
        c
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub hyperparams: Hyperparams,
    pub theta: ParamMatrix,
    pub validation_rmse: f64,
    /// Solver iterations summed over every fit performed.
    pub iterations: usize,
}

fn sorted_grid(grid: &[f64], name: &str) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput(format!("{name} grid is empty")));
    }
    if let Some(v) = grid.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!("{name} grid has invalid value {v}")));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

fn check_pair(train: &TaskDataset, val: &TaskDataset) -> Result<()> {
    if train.p() != val.p() || train.ids() != val.ids() {
        return Err(Error::Dimension("train and validation sets must share p and task ids".into()));
    }
    Ok(())
}

/// True when `(rmse, l1, l2)` beats the incumbent: lower RMSE, ties toward
/// larger λ1 and then larger λ2.
fn better(cand: (f64, f64, f64), best: Option<(f64, f64, f64)>) -> bool {
    match best {
        None => true,
        Some(b) => cand.0 < b.0 || (cand.0 == b.0 && (cand.1, cand.2) > (b.1, b.2)),
    }
}

/// Fits every `(λ1, λ2)` pair on `train`, warm-starting along increasing
/// λ2, and returns the pair with the lowest validation RMSE.
pub fn select_hyperparams(
    train: &TaskDataset,
    val: &TaskDataset,
    w: &WeightGraph,
    grid1: &[f64],
    grid2: &[f64],
    cfg: &SolverConfig,
) -> Result<Selection> {
    select_with_mode(train, val, w, grid1, grid2, cfg, SparsityMode::ElementwiseL1)
}

pub fn select_with_mode(
    train: &TaskDataset,
    val: &TaskDataset,
    w: &WeightGraph,
    grid1: &[f64],
    grid2: &[f64],
    cfg: &SolverConfig,
    mode: SparsityMode,
) -> Result<Selection> {
    check_pair(train, val)?;
    let g1 = sorted_grid(grid1, "lambda1")?;
    let g2 = sorted_grid(grid2, "lambda2")?;
    let cells: Vec<Result<Selection>> =
        g1.par_iter().map(|&l1| sweep_lambda2(train, val, w, l1, &g2, cfg, mode)).collect();

    let mut best: Option<Selection> = None;
    let mut iterations = 0;
    for cell in cells {
        let cell = cell?;
        iterations += cell.iterations;
        let key = |s: &Selection| (s.validation_rmse, s.hyperparams.lambda1, s.hyperparams.lambda2);
        if better(key(&cell), best.as_ref().map(key)) {
            best = Some(cell);
        }
    }
    let mut best = best.expect("grids are nonempty");
    best.iterations = iterations;
    Ok(best)
}

fn sweep_lambda2(
    train: &TaskDataset,
    val: &TaskDataset,
    w: &WeightGraph,
    lambda1: f64,
    grid2: &[f64],
    cfg: &SolverConfig,
    mode: SparsityMode,
) -> Result<Selection> {
    let mut best: Option<Selection> = None;
    let mut state = None;
    let mut iterations = 0;
    let mut fused: Option<(ParamMatrix, f64)> = None;
    for &lambda2 in grid2 {
        let hp = Hyperparams::with_mode(lambda1, lambda2, mode)?;
        let (theta, score) = match &fused {
            Some((theta, score)) => (theta.clone(), *score),
            None => {
                let (fit, next) = match state.take() {
                    Some(prev) => fit_from_state(train, &hp, w, cfg, prev)?,
                    None => ProximalDecomposition::new(train, hp, w, *cfg, None)?.run_with_state()?,
                };
                state = Some(next);
                iterations += fit.iterations;
                let score = rmse(&fit.theta, val)?;
                if lambda2 > 0.0 && train.k() > 1 && cluster_count(&fit.theta, FUSED_TOL) == 1 {
                    fused = Some((fit.theta.clone(), score));
                }
                (fit.theta, score)
            }
        };
        if better((score, lambda1, lambda2), best.as_ref().map(|b| (b.validation_rmse, lambda1, b.hyperparams.lambda2))) {
            best = Some(Selection { hyperparams: hp, theta, validation_rmse: score, iterations: 0 });
        }
    }
    let mut best = best.expect("grid is nonempty");
    best.iterations = iterations;
    Ok(best)
}

/// Selects λ1 for independent per-task lassos (one λ1 shared by all tasks).
/// Each task's lasso is warm-started down the λ1 grid.
pub fn select_single_task(train: &TaskDataset, val: &TaskDataset, grid1: &[f64]) -> Result<Selection> {
    check_pair(train, val)?;
    let g1 = sorted_grid(grid1, "lambda1")?;
    let opts = LassoOptions::default();
    let columns: Vec<Result<Vec<DVector<f64>>>> = train
        .tasks()
        .par_iter()
        .map(|t| {
            let mut out = vec![DVector::zeros(train.p()); g1.len()];
            let mut prev: Option<DVector<f64>> = None;
            for (i, &l1) in g1.iter().enumerate().rev() {
                let beta = lasso_cd_from(&t.x, &t.y, l1, prev.as_ref(), opts)?.beta;
                out[i] = beta.clone();
                prev = Some(beta);
            }
            Ok(out)
        })
        .collect();
    let columns = columns.into_iter().collect::<Result<Vec<_>>>()?;
    let mut best: Option<Selection> = None;
    for (i, &l1) in g1.iter().enumerate() {
        let cols: Vec<DVector<f64>> = columns.iter().map(|c| c[i].clone()).collect();
        let theta = ParamMatrix::from_columns(&cols)?;
        let score = rmse(&theta, val)?;
        if better((score, l1, 0.0), best.as_ref().map(|b| (b.validation_rmse, b.hyperparams.lambda1, 0.0))) {
            best = Some(Selection { hyperparams: Hyperparams::new(l1, 0.0)?, theta, validation_rmse: score, iterations: 0 });
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// Selects λ1 for the pre-grouped baseline with `g` response-correlation groups.
pub fn select_pregroup(
    train: &TaskDataset,
    val: &TaskDataset,
    g: usize,
    grid1: &[f64],
    cfg: &SolverConfig,
) -> Result<Selection> {
    check_pair(train, val)?;
    // validates g up front so the parallel cells cannot all fail the same way
    response_correlation_groups(train, g)?;
    let g1 = sorted_grid(grid1, "lambda1")?;
    let fits: Vec<Result<(f64, ParamMatrix, f64)>> = g1
        .par_iter()
        .map(|&l1| {
            let theta = pregroup_mtl_baseline(train, g, l1, cfg)?;
            let score = rmse(&theta, val)?;
            Ok((l1, theta, score))
        })
        .collect();
    let mut best: Option<Selection> = None;
    for f in fits {
        let (l1, theta, score) = f?;
        if better((score, l1, 0.0), best.as_ref().map(|b| (b.validation_rmse, b.hyperparams.lambda1, 0.0))) {
            let hp = Hyperparams::with_mode(l1, 0.0, SparsityMode::RowGroupL21)?;
            best = Some(Selection { hyperparams: hp, theta, validation_rmse: score, iterations: 0 });
        }
    }
    Ok(best.expect("grid is nonempty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SingleTask,
    #[serde(rename = "nogroup")]
    NoGroup,
    #[serde(rename = "pregroup")]
    PreGroup,
    Ours,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::SingleTask, Method::NoGroup, Method::PreGroup, Method::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Method::SingleTask => "single_task",
            Method::NoGroup => "nogroup",
            Method::PreGroup => "pregroup",
            Method::Ours => "ours",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::InvalidInput(format!("unknown method {s:?}; expected one of single_task, nogroup, pregroup, ours")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub repeats: usize,
    pub methods: Vec<Method>,
    /// Neighbors for the k-NN weight graph of `ours`.
    pub kappa: usize,
    pub phi: f64,
    /// Run `ours` once per κ in [`KAPPA_SWEEP`] instead of only at `kappa`.
    pub kappa_sweep: bool,
    pub lambda2_points: usize,
    pub solver: SolverConfig,
    /// Rescale `solver.gamma` to each training set (see [`SolverConfig::with_scaled_gamma`]).
    pub scale_gamma: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            repeats: 5,
            methods: Method::ALL.to_vec(),
            kappa: 4,
            phi: 0.0,
            kappa_sweep: false,
            lambda2_points: 50,
            solver: SolverConfig { tol: 1e-5, ..SolverConfig::default() },
            scale_gamma: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub seed: u64,
    pub test_rmse: f64,
    pub seconds: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    /// Set for `ours`.
    pub kappa: Option<usize>,
    pub mean_rmse: f64,
    /// Sample standard deviation of test RMSE across repeats.
    pub std_rmse: f64,
    pub mean_seconds: f64,
    pub repeats: Vec<RepeatResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: Method, kappa: Option<usize>) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && (kappa.is_none() || r.kappa == kappa))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,kappa,repeats,mean_rmse,std_rmse_across_repeats,mean_seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method,
                r.kappa.map(|k| k.to_string()).unwrap_or_default(),
                r.repeats.len(),
                crate::data::fmt_f64(r.mean_rmse),
                crate::data::fmt_f64(r.std_rmse),
                crate::data::fmt_f64(r.mean_seconds)
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let header = ["method", "kappa", "mean RMSE", "std (repeats)", "time (s)"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.to_string(),
                    r.kappa.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
                    format!("{:.4}", r.mean_rmse),
                    format!("{:.4}", r.std_rmse),
                    format!("{:.3}", r.mean_seconds),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[&str]| -> String {
            let parts: Vec<String> = cells
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&header);
        out.push_str(&line(&widths.map(|w| "-".repeat(w)).iter().map(String::as_str).collect::<Vec<_>>()));
        for row in &body {
            out.push_str(&line(&row.iter().map(String::as_str).collect::<Vec<_>>()));
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs the validation/test protocol `cfg.repeats` times on instances
/// generated with seeds `spec.seed, spec.seed + 1, ...`. Timing covers
/// weight construction, grouping and hyperparameter selection but not
/// data generation.
pub fn benchmark(spec: &SynthSpec, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeats == 0 {
        return Err(Error::InvalidInput("repeats must be positive".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::InvalidInput("no methods requested".into()));
    }
    cfg.solver.validate()?;
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let mut cells: Vec<(Method, Option<usize>)> = Vec::new();
    for &m in &methods {
        if m == Method::Ours {
            if cfg.kappa_sweep {
                cells.extend(KAPPA_SWEEP.iter().map(|&k| (m, Some(k))));
            } else {
                cells.push((m, Some(cfg.kappa)));
            }
        } else {
            cells.push((m, None));
        }
    }

    let mut results: Vec<Vec<RepeatResult>> = vec![Vec::new(); cells.len()];
    for r in 0..cfg.repeats {
        let seed = spec.seed.wrapping_add(r as u64);
        let inst = generate(&SynthSpec { seed, ..spec.clone() })?;
        for (cell, out) in cells.iter().zip(results.iter_mut()) {
            let start = Instant::now();
            let sel = run_method(cell.0, cell.1, &inst.train, &inst.validation, spec.groups, cfg)?;
            let seconds = start.elapsed().as_secs_f64();
            out.push(RepeatResult {
                seed,
                test_rmse: rmse(&sel.theta, &inst.test)?,
                seconds,
                lambda1: sel.hyperparams.lambda1,
                lambda2: sel.hyperparams.lambda2,
            });
        }
    }

    let rows = cells
        .into_iter()
        .zip(results)
        .map(|((method, kappa), repeats)| {
            let rmses: Vec<f64> = repeats.iter().map(|r| r.test_rmse).collect();
            let (mean_rmse, std_rmse) = mean_std(&rmses);
            let mean_seconds = repeats.iter().map(|r| r.seconds).sum::<f64>() / repeats.len() as f64;
            BenchRow { method, kappa, mean_rmse, std_rmse, mean_seconds, repeats }
        })
        .collect();
    Ok(BenchReport { rows })
}

fn run_method(
    method: Method,
    kappa: Option<usize>,
    train: &TaskDataset,
    val: &TaskDataset,
    groups: usize,
    cfg: &BenchConfig,
) -> Result<Selection> {
    let grid1 = default_lambda1_grid(train);
    let solver_for = |w: &WeightGraph| if cfg.scale_gamma { cfg.solver.with_scaled_gamma(train, w) } else { cfg.solver };
    match method {
        Method::SingleTask => select_single_task(train, val, &grid1),
        Method::NoGroup => {
            let w = WeightGraph::empty(train.k());
            select_with_mode(train, val, &w, &grid1, &[0.0], &solver_for(&w), SparsityMode::RowGroupL21)
        }
        Method::PreGroup => {
            let w = WeightGraph::empty(train.k());
            select_pregroup(train, val, groups, &grid1, &solver_for(&w))
        }
        Method::Ours => {
            let w = knn_weights(train, kappa.unwrap_or(cfg.kappa), cfg.phi)?;
            let grid2 = default_lambda2_grid(train, cfg.lambda2_points);
            select_hyperparams(train, val, &w, &grid1, &grid2, &solver_for(&w))
        }
    }
}
