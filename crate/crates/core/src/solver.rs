//! Parallel proximal decomposition for the fused multitask objective.
//!
//! The objective is split into `m = 2 + |edges|` convex pieces: the squared
//! loss, the sparsity penalty and one fusion term per positive-weight edge.
//! Each piece owns a private copy of the parameters. An iteration applies
//! every piece's prox (step `sigma = m * gamma`) to its own copy, averages
//! the results, and reflects each copy through the average:
//!
//! ```text
//! p_i    = prox_{sigma f_i}(z_i)
//! p      = (1/m) sum_i p_i
//! z_i   += mu * (2p - x - p_i)
//! x     += mu * (p - x)
//! ```
//!
//! For any constant `mu` in `(0, 2)` the averaged iterate `x` converges to a
//! minimizer of the full objective.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{eval_objective, FitResult, Hyperparams, ParamMatrix, TaskDataset};
use crate::error::{Error, Result};
use crate::prox::{fuse_columns, sparsity_into, LossProxCache, LossWork};
use crate::weights::WeightGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TolMetric {
    /// `||x_{l+1} - x_l||_F / max(||x_{l+1}||_F, 1)`, where the change is
    /// at least the RMS movement of the splitting copies
    #[default]
    IterateChange,
    /// `|f(x_{l+1}) - f(x_l)| / max(|f(x_l)|, 1)`
    ObjectiveChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Step scale; the prox step is `sigma = m * gamma`. Affects speed only.
    pub gamma: f64,
    /// Relaxation, constant over iterations, in `(0, 2)`.
    pub mu: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub tol_metric: TolMetric,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { gamma: 1.0, mu: 1.0, max_iter: 5000, tol: 1e-6, tol_metric: TolMetric::IterateChange }
    }
}

impl SolverConfig {
    /// Picks `gamma` so that `sigma = m * gamma` is the reciprocal of the
    /// mean nonzero eigenvalue of `X_s^T X_s`, averaged over tasks.
    ///
    /// The fixed point does not depend on `gamma`; this only balances the
    /// loss prox against the penalties, which usually cuts iterations by an
    /// order of magnitude on standardized-scale data.
    pub fn with_scaled_gamma(mut self, data: &TaskDataset, w: &WeightGraph) -> Self {
        let m = (2 + w.len()) as f64;
        let mut per_task: Vec<f64> =
            data.tasks().iter().map(|t| t.x.norm_squared() / t.n().min(data.p()) as f64).collect();
        per_task.sort_by(f64::total_cmp);
        let mean_eig = per_task.iter().sum::<f64>() / data.k() as f64;
        if mean_eig > 0.0 && mean_eig.is_finite() {
            self.gamma = 1.0 / (m * mean_eig);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.mu > 0.0 && self.mu < 2.0) {
            return Err(Error::InvalidInput(format!("mu must lie in (0, 2), got {}", self.mu)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Auxiliary copies and the averaged iterate.
///
/// Copy 0 belongs to the loss, copy 1 to the sparsity penalty and copy
/// `2 + e` to edge `e` of the weight graph (sorted `(s, t)` order). A fusion
/// copy's prox only touches its own two columns, so all fusion copies keep
/// agreeing outside them; they are stored as one shared matrix plus the two
/// private columns of each edge.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub loss: DMatrix<f64>,
    pub sparsity: DMatrix<f64>,
    /// Columns of every fusion copy outside its own edge.
    pub fusion_shared: DMatrix<f64>,
    /// Columns `s` and `t` of the copy for edge `(s, t)`, as `p x 2`.
    pub fusion_edges: Vec<DMatrix<f64>>,
    pub average: DMatrix<f64>,
    pub iteration: usize,
}

impl SolverState {
    /// Every copy, and hence the average, set to `init`.
    pub fn uniform(init: &DMatrix<f64>, edges: &WeightGraph) -> Self {
        let fusion_edges = edges
            .edges()
            .iter()
            .map(|e| {
                let mut cols = DMatrix::zeros(init.nrows(), 2);
                cols.column_mut(0).copy_from(&init.column(e.s));
                cols.column_mut(1).copy_from(&init.column(e.t));
                cols
            })
            .collect();
        SolverState {
            loss: init.clone(),
            sparsity: init.clone(),
            fusion_shared: init.clone(),
            fusion_edges,
            average: init.clone(),
            iteration: 0,
        }
    }

    pub fn m(&self) -> usize {
        2 + self.fusion_edges.len()
    }

    /// Materializes copy `i` in full.
    pub fn copy(&self, i: usize, w: &WeightGraph) -> DMatrix<f64> {
        match i {
            0 => self.loss.clone(),
            1 => self.sparsity.clone(),
            _ => {
                let e = &w.edges()[i - 2];
                let cols = &self.fusion_edges[i - 2];
                let mut full = self.fusion_shared.clone();
                full.column_mut(e.s).copy_from(&cols.column(0));
                full.column_mut(e.t).copy_from(&cols.column(1));
                full
            }
        }
    }
}

/// Squared Frobenius norm summed column by column in sorted order, so that
/// relabelling tasks cannot change the result.
fn frobenius_sq_order_free(m: &DMatrix<f64>) -> f64 {
    let mut cols: Vec<f64> = m.column_iter().map(|c| c.norm_squared()).collect();
    cols.sort_by(f64::total_cmp);
    cols.iter().sum()
}

fn insertion_sort(v: &mut [f64]) {
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
}

/// A running instance of the solver on one problem.
pub struct ProximalDecomposition<'a> {
    data: &'a TaskDataset,
    hp: Hyperparams,
    weights: &'a WeightGraph,
    cfg: SolverConfig,
    sigma: f64,
    cache: LossProxCache,
    state: SolverState,
    /// `(edge, side)` pairs touching each column.
    incident: Vec<Vec<(usize, usize)>>,
    p_loss: DMatrix<f64>,
    p_sparsity: DMatrix<f64>,
    p_edges: Vec<DMatrix<f64>>,
    target: DMatrix<f64>,
    work: LossWork,
    scratch: Vec<f64>,
    copy_change: Vec<f64>,
    history: Vec<f64>,
    last_objective: Option<f64>,
}

impl<'a> ProximalDecomposition<'a> {
    pub fn new(
        data: &'a TaskDataset,
        hp: Hyperparams,
        weights: &'a WeightGraph,
        cfg: SolverConfig,
        init: Option<&ParamMatrix>,
    ) -> Result<Self> {
        let start = match init {
            Some(theta) => {
                theta.check_shape(data.p(), data.k())?;
                theta.as_matrix().clone()
            }
            None => DMatrix::zeros(data.p(), data.k()),
        };
        if weights.k() != data.k() {
            return Err(Error::Dimension(format!("weight graph covers {} tasks, dataset has {}", weights.k(), data.k())));
        }
        Self::from_state(data, hp, weights, cfg, SolverState::uniform(&start, weights))
    }

    /// Resumes from a full state, e.g. the final state of a neighbouring fit.
    pub fn from_state(
        data: &'a TaskDataset,
        hp: Hyperparams,
        weights: &'a WeightGraph,
        cfg: SolverConfig,
        mut state: SolverState,
    ) -> Result<Self> {
        hp.validate()?;
        cfg.validate()?;
        if weights.k() != data.k() {
            return Err(Error::Dimension(format!("weight graph covers {} tasks, dataset has {}", weights.k(), data.k())));
        }
        let m = 2 + weights.len();
        if state.m() != m {
            return Err(Error::Dimension(format!("solver state has {} copies, problem needs {}", state.m(), m)));
        }
        let (p, k) = (data.p(), data.k());
        let full = [&state.loss, &state.sparsity, &state.fusion_shared, &state.average];
        if full.iter().any(|c| c.shape() != (p, k)) || state.fusion_edges.iter().any(|c| c.shape() != (p, 2)) {
            return Err(Error::Dimension(format!("solver state does not match a {p}x{k} parameter matrix")));
        }
        state.iteration = 0;
        let sigma = m as f64 * cfg.gamma;
        let cache = LossProxCache::new(data, sigma)?;
        let mut incident = vec![Vec::new(); k];
        for (e, edge) in weights.edges().iter().enumerate() {
            incident[edge.s].push((e, 0));
            incident[edge.t].push((e, 1));
        }
        let work = cache.workspace();
        Ok(ProximalDecomposition {
            data,
            hp,
            weights,
            cfg,
            sigma,
            cache,
            state,
            incident,
            p_loss: DMatrix::zeros(p, k),
            p_sparsity: DMatrix::zeros(p, k),
            p_edges: vec![DMatrix::zeros(p, 2); m - 2],
            target: DMatrix::zeros(p, k),
            work,
            scratch: Vec::new(),
            copy_change: Vec::new(),
            history: Vec::new(),
            last_objective: None,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn theta(&self) -> ParamMatrix {
        ParamMatrix::from_matrix_unchecked(self.state.average.clone())
    }

    /// One full iteration; returns the convergence metric.
    pub fn step(&mut self) -> Result<f64> {
        let before = match (self.cfg.tol_metric, self.last_objective) {
            (TolMetric::ObjectiveChange, None) => Some(self.objective_of(&self.state.average)?),
            (_, last) => last,
        };
        let mu = self.cfg.mu;
        let m = self.state.m() as f64;
        let n_edges = self.weights.len();
        let st = &mut self.state;

        self.cache.apply_into(&st.loss, &mut self.p_loss, &mut self.work);
        sparsity_into(&st.sparsity, self.hp.lambda1 * self.sigma, self.hp.sparsity_mode, &mut self.p_sparsity);
        for ((buf, cols), edge) in self.p_edges.iter_mut().zip(&st.fusion_edges).zip(self.weights.edges()) {
            buf.copy_from(cols);
            let (a, b) = buf.as_mut_slice().split_at_mut(cols.nrows());
            fuse_columns(a, b, self.sigma * self.hp.lambda2 * edge.w);
        }

        // mean of all prox outputs, written into `target`; the edge terms of
        // each entry are added in sorted order so the sum ignores labelling
        let p = st.average.nrows();
        for (s, touching) in self.incident.iter().enumerate() {
            let untouched = (n_edges - touching.len()) as f64;
            let range = s * p..(s + 1) * p;
            let (pl, ps) = (&self.p_loss.as_slice()[range.clone()], &self.p_sparsity.as_slice()[range.clone()]);
            let shared = &st.fusion_shared.as_slice()[range.clone()];
            let out = &mut self.target.as_mut_slice()[range];
            let cols: Vec<&[f64]> =
                touching.iter().map(|&(e, side)| &self.p_edges[e].as_slice()[side * p..(side + 1) * p]).collect();
            let buf = &mut self.scratch;
            buf.resize(cols.len(), 0.0);
            for j in 0..p {
                for (b, c) in buf.iter_mut().zip(&cols) {
                    *b = c[j];
                }
                insertion_sort(buf);
                let mut sum = pl[j] + ps[j] + untouched * shared[j];
                for v in buf.iter() {
                    sum += v;
                }
                out[j] = sum / m;
            }
        }

        // average and the reflection point 2p - x
        let mut change_sq = Vec::with_capacity(st.average.ncols());
        for (x, t) in st.average.as_mut_slice().chunks_mut(p).zip(self.target.as_mut_slice().chunks_mut(p)) {
            let mut c2 = 0.0;
            for (x, t) in x.iter_mut().zip(t.iter_mut()) {
                let mean = *t;
                *t = 2.0 * mean - *x;
                let delta = mu * (mean - *x);
                *x += delta;
                c2 += delta * delta;
            }
            change_sq.push(c2);
        }
        // squared movement of every copy, one entry per column piece; summed
        // after sorting so the total ignores labelling
        let copy_sq = &mut self.copy_change;
        copy_sq.clear();
        let target = &self.target;
        let mut reflect = |z: &mut DMatrix<f64>, p_i: &DMatrix<f64>| {
            let cols = z.as_mut_slice().chunks_mut(p).zip(target.as_slice().chunks(p)).zip(p_i.as_slice().chunks(p));
            for ((z, t), p_i) in cols {
                let mut c2 = 0.0;
                for ((z, t), p) in z.iter_mut().zip(t).zip(p_i) {
                    let d = mu * (t - p);
                    *z += d;
                    c2 += d * d;
                }
                copy_sq.push(c2);
            }
        };
        reflect(&mut st.loss, &self.p_loss);
        reflect(&mut st.sparsity, &self.p_sparsity);
        for ((cols, p_e), edge) in st.fusion_edges.iter_mut().zip(&self.p_edges).zip(self.weights.edges()) {
            let (z, pe) = (cols.as_mut_slice(), p_e.as_slice());
            for (side, col) in [edge.s, edge.t].into_iter().enumerate() {
                let t = &target.as_slice()[col * p..(col + 1) * p];
                let mut c2 = 0.0;
                for ((z, t), pe) in z[side * p..(side + 1) * p].iter_mut().zip(t).zip(&pe[side * p..(side + 1) * p]) {
                    let d = mu * (t - pe);
                    *z += d;
                    c2 += d * d;
                }
                copy_sq.push(c2);
            }
        }
        let shared = st.fusion_shared.as_mut_slice().chunks_mut(p).zip(target.as_slice().chunks(p));
        for ((z, t), touching) in shared.zip(&self.incident) {
            let mut c2 = 0.0;
            for (z, t) in z.iter_mut().zip(t) {
                let d = mu * (t - *z);
                *z += d;
                c2 += d * d;
            }
            copy_sq.push(c2 * (n_edges - touching.len()) as f64);
        }
        st.iteration += 1;

        if st.average.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: st.iteration, lambda2: Some(self.hp.lambda2) });
        }

        let metric = match self.cfg.tol_metric {
            TolMetric::IterateChange => {
                change_sq.sort_by(f64::total_cmp);
                let change = change_sq.iter().sum::<f64>().sqrt();
                self.copy_change.sort_by(f64::total_cmp);
                let copies = (self.copy_change.iter().sum::<f64>() / m).sqrt();
                change.max(copies) / frobenius_sq_order_free(&st.average).sqrt().max(1.0)
            }
            TolMetric::ObjectiveChange => {
                let before = before.expect("set for the objective metric");
                let after = self.objective_of(&self.state.average)?;
                self.last_objective = Some(after);
                (after - before).abs() / before.abs().max(1.0)
            }
        };
        self.history.push(metric);
        Ok(metric)
    }

    fn objective_of(&self, theta: &DMatrix<f64>) -> Result<f64> {
        let theta = ParamMatrix::from_matrix_unchecked(theta.clone());
        eval_objective(&theta, self.data, &self.hp, self.weights)
    }

    /// Iterates until the tolerance or the iteration cap is reached.
    pub fn run(self) -> Result<FitResult> {
        self.run_with_state().map(|(fit, _)| fit)
    }

    pub fn run_with_state(mut self) -> Result<(FitResult, SolverState)> {
        let mut converged = false;
        while self.state.iteration < self.cfg.max_iter {
            if self.step()? < self.cfg.tol {
                converged = true;
                break;
            }
        }
        let theta = self.theta();
        let objective = eval_objective(&theta, self.data, &self.hp, self.weights)?;
        let fit = FitResult {
            theta,
            objective,
            iterations: self.state.iteration,
            converged,
            residual_history: self.history,
        };
        Ok((fit, self.state))
    }
}

/// Solves the fused multitask problem from `init` (zeros when `None`).
pub fn fit(
    data: &TaskDataset,
    hp: &Hyperparams,
    w: &WeightGraph,
    cfg: &SolverConfig,
    init: Option<&ParamMatrix>,
) -> Result<FitResult> {
    ProximalDecomposition::new(data, *hp, w, *cfg, init)?.run()
}

/// [`fit`] with every auxiliary copy initialized to `warm`.
pub fn fit_warm(
    data: &TaskDataset,
    hp: &Hyperparams,
    w: &WeightGraph,
    cfg: &SolverConfig,
    warm: &ParamMatrix,
) -> Result<FitResult> {
    fit(data, hp, w, cfg, Some(warm))
}

/// Continues from a previous solver state; when the state is a fixed point
/// for `hp` the solver stops after one iteration.
pub fn fit_from_state(
    data: &TaskDataset,
    hp: &Hyperparams,
    w: &WeightGraph,
    cfg: &SolverConfig,
    state: SolverState,
) -> Result<(FitResult, SolverState)> {
    ProximalDecomposition::from_state(data, *hp, w, *cfg, state)?.run_with_state()
}
