//! Reference methods: coordinate-descent lasso, per-task and pooled fits,
//! the row-sparse multitask model, response-correlation pre-grouping and
//! post-hoc clustering of single-task coefficients.

use nalgebra::{DMatrix, DVector};

use crate::data::{Hyperparams, ParamMatrix, SparsityMode, TaskDataset};
use crate::error::{Error, Result};
use crate::path::{cut_tree, Dendrogram, Merge};
use crate::prox::soft_threshold;
use crate::solver::{fit, SolverConfig};
use crate::weights::WeightGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Stop once the largest KKT violation is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions { tol: 1e-8, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub beta: DVector<f64>,
    pub objective: f64,
    /// Full coordinate sweeps performed.
    pub iterations: usize,
    pub converged: bool,
}

/// Largest violation of the optimality conditions of
/// `||y - X b||^2 + lambda1 ||b||_1` at `beta`.
pub fn kkt_violation(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda1: f64) -> f64 {
    kkt_from_gradient(&(x.tr_mul(&(y - x * beta)) * 2.0), beta, lambda1)
}

/// `grad` is `2 X^T (y - X beta)`, the negative gradient of the loss.
fn kkt_from_gradient(grad: &DVector<f64>, beta: &DVector<f64>, lambda1: f64) -> f64 {
    grad.iter()
        .zip(beta.iter())
        .map(|(g, b)| {
            if *b != 0.0 {
                (g - lambda1 * b.signum()).abs()
            } else {
                (g.abs() - lambda1).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda1: f64) -> f64 {
    (y - x * beta).norm_squared() + lambda1 * beta.lp_norm(1)
}

/// Cyclic coordinate descent with covariance updates for
/// `min ||y - X b||^2 + lambda1 ||b||_1`.
pub fn lasso_cd(x: &DMatrix<f64>, y: &DVector<f64>, lambda1: f64, tol: f64, max_iter: usize) -> Result<LassoFit> {
    lasso_cd_from(x, y, lambda1, None, LassoOptions { tol, max_iter })
}

/// [`lasso_cd`] started from `init` (zeros when `None`).
pub fn lasso_cd_from(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda1: f64,
    init: Option<&DVector<f64>>,
    opts: LassoOptions,
) -> Result<LassoFit> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("X has {} rows, y has {}", x.nrows(), y.len())));
    }
    if !(lambda1 >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda1 must be nonnegative, got {lambda1}")));
    }
    let p = x.ncols();
    let mut beta: DVector<f64> = match init {
        Some(b) if b.len() == p => b.clone(),
        Some(b) => return Err(Error::Dimension(format!("initial beta has length {}, expected {p}", b.len()))),
        None => DVector::zeros(p),
    };
    let gram = x.tr_mul(x);
    let xty = x.tr_mul(y);
    let half = 0.5 * lambda1;
    // X^T (y - X beta), refreshed after every sweep to stop drift
    let mut corr = &xty - &gram * &beta;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        for j in 0..p {
            let gjj = gram[(j, j)];
            if gjj <= 0.0 {
                continue;
            }
            let z = corr[j] + gjj * beta[j];
            let new = soft_threshold(z, half) / gjj;
            let delta: f64 = new - beta[j];
            if delta != 0.0 {
                corr.axpy(-delta, &gram.column(j), 1.0);
                beta[j] = new;
            }
        }
        corr = &xty - &gram * &beta;
        if kkt_from_gradient(&(&corr * 2.0), &beta, lambda1) <= opts.tol {
            converged = true;
            break;
        }
    }
    let objective = lasso_objective(x, y, &beta, lambda1);
    Ok(LassoFit { beta, objective, iterations, converged })
}

/// Each task fitted on its own by lasso.
pub fn single_task_baseline(data: &TaskDataset, lambda1: f64) -> Result<ParamMatrix> {
    single_task_baseline_with(data, lambda1, LassoOptions::default())
}

pub fn single_task_baseline_with(data: &TaskDataset, lambda1: f64, opts: LassoOptions) -> Result<ParamMatrix> {
    let cols = data
        .tasks()
        .iter()
        .map(|t| lasso_cd(&t.x, &t.y, lambda1, opts.tol, opts.max_iter).map(|f| f.beta))
        .collect::<Result<Vec<_>>>()?;
    ParamMatrix::from_columns(&cols)
}

/// All tasks stacked into one lasso problem with penalty `k * lambda1`,
/// the limit of the fused model when every column is forced equal.
pub fn pooled_lasso(data: &TaskDataset, lambda1: f64, opts: LassoOptions) -> Result<LassoFit> {
    let n = data.total_rows();
    let p = data.p();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut row = 0;
    for t in data.tasks() {
        x.rows_mut(row, t.n()).copy_from(&t.x);
        y.rows_mut(row, t.n()).copy_from(&t.y);
        row += t.n();
    }
    lasso_cd(&x, &y, data.k() as f64 * lambda1, opts.tol, opts.max_iter)
}

/// Joint fit with the row-group penalty `lambda1 sum_j ||theta_{j.}||_2`
/// and no fusion: the same features are selected for every task.
pub fn nogroup_mtl_baseline(data: &TaskDataset, lambda1: f64, cfg: &SolverConfig) -> Result<ParamMatrix> {
    let hp = Hyperparams::with_mode(lambda1, 0.0, SparsityMode::RowGroupL21)?;
    Ok(fit(data, &hp, &WeightGraph::empty(data.k()), cfg, None)?.theta)
}

/// Average-linkage agglomerative clustering on a symmetric distance matrix.
///
/// Ties are broken toward the pair whose smallest members have the lowest
/// indices. Heights are linkage distances.
pub fn average_linkage(dist: &[Vec<f64>], leaves: Vec<String>) -> Result<Dendrogram> {
    let k = dist.len();
    if leaves.len() != k || dist.iter().any(|r| r.len() != k) {
        return Err(Error::Dimension("distance matrix must be square and match the leaf count".into()));
    }
    // active clusters: (id, members)
    let mut active: Vec<(usize, Vec<usize>)> = (0..k).map(|s| (s, vec![s])).collect();
    let mut merges = Vec::new();
    let linkage = |a: &[usize], b: &[usize]| -> f64 {
        let total: f64 = a.iter().flat_map(|&i| b.iter().map(move |&j| dist[i][j])).sum();
        total / (a.len() * b.len()) as f64
    };
    while active.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..active.len() {
            for j in i + 1..active.len() {
                let d = linkage(&active[i].1, &active[j].1);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (height, i, j) = best.expect("at least two clusters");
        // active is kept sorted by smallest member, so i holds the lower one
        let right = active.remove(j);
        let left = std::mem::take(&mut active[i]);
        let new_cluster = k + merges.len();
        merges.push(Merge { height, left: left.0, right: right.0, new_cluster });
        let mut members = left.1;
        members.extend(right.1);
        members.sort_unstable();
        active[i] = (new_cluster, members);
        active.sort_by_key(|c| c.1[0]);
    }
    Ok(Dendrogram { leaves, merges, diagnostics: Vec::new() })
}

/// Average-linkage tree over the Euclidean distances between columns.
pub fn post_cluster_single_task(theta: &ParamMatrix) -> Dendrogram {
    let k = theta.k();
    let dist: Vec<Vec<f64>> = (0..k).map(|s| (0..k).map(|t| theta.column_distance(s, t)).collect()).collect();
    average_linkage(&dist, (0..k).map(|s| s.to_string()).collect()).expect("square distance matrix")
}

fn pearson(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// `g` groups from average linkage on `1 - corr(y_s, y_t)`.
pub fn response_correlation_groups(data: &TaskDataset, g: usize) -> Result<Vec<Vec<usize>>> {
    if data.common_n().is_none() {
        return Err(Error::InvalidInput("response correlation needs equal-length responses for every task".into()));
    }
    let k = data.k();
    let dist: Vec<Vec<f64>> = (0..k)
        .map(|s| {
            (0..k)
                .map(|t| if s == t { 0.0 } else { 1.0 - pearson(&data.task(s).y, &data.task(t).y) })
                .collect()
        })
        .collect();
    let tree = average_linkage(&dist, data.ids())?;
    cut_tree(&tree, g)
}

/// Pre-grouping by response correlation followed by the row-group model
/// within each group.
pub fn pregroup_mtl_baseline(data: &TaskDataset, g: usize, lambda1: f64, cfg: &SolverConfig) -> Result<ParamMatrix> {
    let groups = response_correlation_groups(data, g)?;
    let mut theta = DMatrix::zeros(data.p(), data.k());
    for group in &groups {
        let sub = data.subset(group)?;
        let part = nogroup_mtl_baseline(&sub, lambda1, cfg)?;
        for (i, &s) in group.iter().enumerate() {
            theta.column_mut(s).copy_from(&part.column(i));
        }
    }
    ParamMatrix::from_matrix(theta)
}
