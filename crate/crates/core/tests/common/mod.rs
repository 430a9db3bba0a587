//! Shared helpers for the integration tests: random instances and
//! independent numeric oracles.

#![allow(dead_code)]

use fusemtl::weights::WeightGraph;
use fusemtl::{eval_objective, Hyperparams, ParamMatrix, SparsityMode, Task, TaskDataset};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `k` tasks with independent standard-normal designs and responses.
pub fn random_dataset(rng: &mut ChaCha8Rng, k: usize, p: usize, n: usize) -> TaskDataset {
    let tasks = (0..k)
        .map(|s| Task::new(format!("t{s}"), normal_matrix(rng, n, p), normal_vector(rng, n)))
        .collect();
    TaskDataset::new(tasks).unwrap()
}

/// Least squares through the normal equations.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    x.tr_mul(x).lu().solve(&x.tr_mul(y)).expect("full column rank")
}

/// Minimizes a strictly convex scalar function on `[lo, hi]` by ternary
/// search; kinks are harmless.
pub fn ternary(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) <= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

/// Gradient descent with Armijo backtracking, keeping the best point seen.
/// `grad` may return any subgradient at kinks.
pub fn descend(
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    x0: Vec<f64>,
    iters: usize,
) -> Vec<f64> {
    let mut x = x0;
    let mut fx = f(&x);
    let mut step = 1.0;
    for _ in 0..iters {
        let g = grad(&x);
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg == 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let fc = f(&cand);
            if fc <= fx - 0.25 * step * gg {
                x = cand;
                fx = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step *= 2.0;
    }
    x
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// A subgradient of the full objective at `theta`.
pub fn objective_subgradient(theta: &DMatrix<f64>, data: &TaskDataset, hp: &Hyperparams, w: &WeightGraph) -> DMatrix<f64> {
    let (p, k) = theta.shape();
    let mut g = DMatrix::zeros(p, k);
    for (s, t) in data.tasks().iter().enumerate() {
        let r = &t.x * theta.column(s) - &t.y;
        g.set_column(s, &(t.x.tr_mul(&r) * 2.0));
    }
    match hp.sparsity_mode {
        SparsityMode::ElementwiseL1 => {
            for (gv, tv) in g.iter_mut().zip(theta.iter()) {
                *gv += hp.lambda1 * sign(*tv);
            }
        }
        SparsityMode::RowGroupL21 => {
            for j in 0..p {
                let norm = theta.row(j).norm();
                if norm > 0.0 {
                    for s in 0..k {
                        g[(j, s)] += hp.lambda1 * theta[(j, s)] / norm;
                    }
                }
            }
        }
    }
    for e in w.edges() {
        let d = theta.column(e.s) - theta.column(e.t);
        let norm = d.norm();
        if norm > 0.0 {
            let u = d * (hp.lambda2 * e.w / norm);
            let gs = g.column(e.s) + &u;
            let gt = g.column(e.t) - &u;
            g.set_column(e.s, &gs);
            g.set_column(e.t, &gt);
        }
    }
    g
}

/// Long-run subgradient descent with diminishing steps from zero; returns
/// the best objective seen and its iterate.
pub fn subgradient_oracle(
    data: &TaskDataset,
    hp: &Hyperparams,
    w: &WeightGraph,
    iters: usize,
) -> (f64, ParamMatrix) {
    let (p, k) = (data.p(), data.k());
    let lip = data
        .tasks()
        .iter()
        .map(|t| 2.0 * t.x.tr_mul(&t.x).symmetric_eigenvalues().max())
        .fold(0.0, f64::max);
    let obj = |m: &DMatrix<f64>| eval_objective(&ParamMatrix::from_matrix(m.clone()).unwrap(), data, hp, w).unwrap();
    let mut theta = DMatrix::zeros(p, k);
    let mut best = (obj(&theta), theta.clone());
    for it in 0..iters {
        let g = objective_subgradient(&theta, data, hp, w);
        let step = 1.0 / (lip * (1.0 + it as f64 / 50.0).sqrt());
        theta -= g * step;
        let f = obj(&theta);
        if f < best.0 {
            best = (f, theta.clone());
        }
    }
    (best.0, ParamMatrix::from_matrix(best.1).unwrap())
}

/// Relabels tasks: task `s` of the result is task `order[s]` of `data`.
pub fn permute_tasks(data: &TaskDataset, order: &[usize]) -> TaskDataset {
    TaskDataset::new(order.iter().map(|&s| data.task(s).clone()).collect()).unwrap()
}

/// Minimizes `0.5 a'Ha - g'a + sum_i tau_i ||D_i a||_2` by iteratively
/// reweighted least squares, using `||v|| = min_eta ||v||^2 / (2 eta) + eta / 2`.
pub fn irls(h: &DMatrix<f64>, g: &DVector<f64>, terms: &[(f64, DMatrix<f64>)], iters: usize) -> DVector<f64> {
    let mut a = h.clone().lu().solve(g).unwrap_or_else(|| g.clone());
    for _ in 0..iters {
        let mut m = h.clone();
        for (tau, d) in terms {
            let eta = (d * &a).norm().max(1e-9);
            m += d.tr_mul(d) * (*tau / eta);
        }
        let next = m.lu().solve(g).expect("reweighted system is positive definite");
        let change = (&next - &a).amax();
        a = next;
        if change <= 1e-16 {
            break;
        }
    }
    a
}

/// Sum of squared residuals of one shared column over all tasks plus
/// `k * lambda1 * ||theta||_1`.
pub fn pooled_objective(data: &TaskDataset, theta: &DVector<f64>, lambda1: f64) -> f64 {
    let loss: f64 = data.tasks().iter().map(|t| (&t.y - &t.x * theta).norm_squared()).sum();
    loss + data.k() as f64 * lambda1 * theta.lp_norm(1)
}
