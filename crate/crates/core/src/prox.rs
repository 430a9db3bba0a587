//! Closed-form proximal maps of the three objective families.
//!
//! With step `sigma`, `prox_{sigma f}(b) = argmin_a sigma f(a) + 1/2 ||a - b||^2`.
//! The public functions are pure; the solver uses the `*_into` variants to
//! avoid reallocating the `p x k` buffers every iteration.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::{ParamMatrix, SparsityMode, TaskDataset};
use crate::error::{Error, Result};

/// Soft-thresholding, `sign(v) * max(|v| - threshold, 0)`.
#[inline]
pub fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
enum LossFactor {
    /// `(sigma X^T X + I/2)^-1` (p x p).
    Primal(DMatrix<f64>),
    /// Used when `n < p`, through
    /// `(sigma X^T X + I/2)^-1 = 2 I - 4 sigma X^T (I + 2 sigma X X^T)^-1 X`;
    /// holds `X^T` and `(I + 2 sigma X X^T)^-1 X`.
    Dual { xt: DMatrix<f64>, solved: DMatrix<f64> },
}

/// Tasks with bit-identical design matrices share one factorization and
/// are solved together as a block of columns.
#[derive(Debug, Clone)]
struct DesignGroup {
    tasks: Vec<usize>,
    factor: LossFactor,
}

/// Per-task factorizations for the squared-loss prox at a fixed `sigma`.
#[derive(Debug, Clone)]
pub struct LossProxCache {
    sigma: f64,
    k: usize,
    groups: Vec<DesignGroup>,
    /// `sigma X_s^T y_s` for each task.
    scaled_xty: Vec<DVector<f64>>,
}

/// Scratch blocks for [`LossProxCache`], one pair per design group.
#[derive(Debug, Clone)]
pub(crate) struct LossWork {
    rhs: Vec<DMatrix<f64>>,
    inner: Vec<DMatrix<f64>>,
}

impl LossProxCache {
    pub fn new(data: &TaskDataset, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
        }
        let p = data.p();
        let mut groups: Vec<DesignGroup> = Vec::new();
        let mut reps: Vec<usize> = Vec::new();
        let mut scaled_xty = Vec::with_capacity(data.k());
        for (s, task) in data.tasks().iter().enumerate() {
            scaled_xty.push(task.x.tr_mul(&task.y) * sigma);
            if let Some(g) = reps.iter().position(|&r| data.task(r).x == task.x) {
                groups[g].tasks.push(s);
                continue;
            }
            let n = task.n();
            let factor = if n < p {
                let mut gram = &task.x * task.x.transpose() * (2.0 * sigma);
                for i in 0..n {
                    gram[(i, i)] += 1.0;
                }
                let chol = Cholesky::new(gram).ok_or_else(|| not_pd(&task.id))?;
                LossFactor::Dual { xt: task.x.transpose(), solved: chol.solve(&task.x) }
            } else {
                let mut gram = task.x.tr_mul(&task.x) * sigma;
                for j in 0..p {
                    gram[(j, j)] += 0.5;
                }
                LossFactor::Primal(Cholesky::new(gram).ok_or_else(|| not_pd(&task.id))?.inverse())
            };
            reps.push(s);
            groups.push(DesignGroup { tasks: vec![s], factor });
        }
        Ok(LossProxCache { sigma, k: data.k(), groups, scaled_xty })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of distinct design matrices.
    pub fn design_groups(&self) -> usize {
        self.groups.len()
    }

    pub(crate) fn workspace(&self) -> LossWork {
        let p = self.scaled_xty.first().map_or(0, |v| v.len());
        let mut work = LossWork { rhs: Vec::new(), inner: Vec::new() };
        for g in &self.groups {
            work.rhs.push(DMatrix::zeros(p, g.tasks.len()));
            let n = match &g.factor {
                LossFactor::Dual { solved, .. } => solved.nrows(),
                LossFactor::Primal(inv) => inv.nrows(),
            };
            work.inner.push(DMatrix::zeros(n, g.tasks.len()));
        }
        work
    }

    pub(crate) fn apply_into(&self, b: &DMatrix<f64>, out: &mut DMatrix<f64>, work: &mut LossWork) {
        for ((g, rhs), inner) in self.groups.iter().zip(&mut work.rhs).zip(&mut work.inner) {
            for (c, &s) in g.tasks.iter().enumerate() {
                let mut col = rhs.column_mut(c);
                col.copy_from(&self.scaled_xty[s]);
                col.axpy(0.5, &b.column(s), 1.0);
            }
            match &g.factor {
                LossFactor::Primal(inv) => {
                    inner.gemm(1.0, inv, rhs, 0.0);
                    std::mem::swap(rhs, inner);
                }
                LossFactor::Dual { xt, solved } => {
                    inner.gemm(1.0, solved, rhs, 0.0);
                    rhs.gemm(-4.0 * self.sigma, xt, inner, 2.0);
                }
            }
            for (c, &s) in g.tasks.iter().enumerate() {
                out.column_mut(s).copy_from(&rhs.column(c));
            }
        }
    }
}

fn not_pd(id: &str) -> Error {
    Error::InvalidInput(format!("loss prox system for task '{id}' is not positive definite"))
}

/// Prox of `sigma * sum_s ||y_s - X_s a_s||^2`: a ridge solve per column.
pub fn prox_loss(b: &ParamMatrix, cache: &LossProxCache) -> Result<ParamMatrix> {
    if b.k() != cache.k() || cache.scaled_xty.first().map_or(0, |v| v.len()) != b.p() {
        return Err(Error::Dimension(format!("prox input is {}x{}, cache expects {} tasks", b.p(), b.k(), cache.k())));
    }
    let mut out = DMatrix::zeros(b.p(), b.k());
    cache.apply_into(b.as_matrix(), &mut out, &mut cache.workspace());
    Ok(ParamMatrix::from_matrix_unchecked(out))
}

pub(crate) fn sparsity_into(b: &DMatrix<f64>, threshold: f64, mode: SparsityMode, out: &mut DMatrix<f64>) {
    match mode {
        SparsityMode::ElementwiseL1 => {
            for (o, v) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *o = soft_threshold(*v, threshold);
            }
        }
        SparsityMode::RowGroupL21 => {
            let mut squares = Vec::with_capacity(b.ncols());
            for j in 0..b.nrows() {
                // summed in sorted order so the norm ignores column order
                squares.clear();
                squares.extend(b.row(j).iter().map(|v| v * v));
                squares.sort_by(f64::total_cmp);
                let norm = squares.iter().sum::<f64>().sqrt();
                let scale = if norm > threshold { 1.0 - threshold / norm } else { 0.0 };
                for s in 0..b.ncols() {
                    out[(j, s)] = scale * b[(j, s)];
                }
            }
        }
    }
}

/// Prox of `sigma * lambda1 * penalty`, either elementwise soft-thresholding
/// or row-wise group shrinkage.
pub fn prox_sparsity(b: &ParamMatrix, lambda1: f64, sigma: f64, mode: SparsityMode) -> ParamMatrix {
    let mut out = DMatrix::zeros(b.p(), b.k());
    sparsity_into(b.as_matrix(), lambda1 * sigma, mode, &mut out);
    ParamMatrix::from_matrix_unchecked(out)
}

/// Interpolation coefficient of the pairwise fusion prox for strength
/// `tau = sigma * lambda2 * w_st` and column distance `d`.
#[inline]
pub fn fusion_coefficient(tau: f64, d: f64) -> f64 {
    if d <= 0.0 || tau >= 0.5 * d {
        0.5
    } else {
        tau / d
    }
}

/// Applies the pairwise fusion prox to columns `s` and `t` of `m` in place.
pub(crate) fn fusion_pair_in_place(m: &mut DMatrix<f64>, s: usize, t: usize, tau: f64) {
    let p = m.nrows();
    let (lo, hi) = (s.min(t), s.max(t));
    let (head, tail) = m.as_mut_slice().split_at_mut(hi * p);
    let (a, b) = (&mut head[lo * p..(lo + 1) * p], &mut tail[..p]);
    if s < t {
        fuse_columns(a, b, tau);
    } else {
        fuse_columns(b, a, tau);
    }
}

/// Pairwise fusion prox on two equal-length columns.
///
/// Swapping the arguments yields bit-identical results with the roles
/// swapped, which keeps the solver exactly equivariant under task
/// relabelling.
pub(crate) fn fuse_columns(a: &mut [f64], b: &mut [f64], tau: f64) {
    let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    let c = fusion_coefficient(tau, d2.sqrt());
    if c == 0.5 {
        // both columns collapse onto the same midpoint bit for bit
        for (x, y) in a.iter_mut().zip(b.iter_mut()) {
            let mid = 0.5 * (*x + *y);
            *x = mid;
            *y = mid;
        }
    } else {
        for (x, y) in a.iter_mut().zip(b.iter_mut()) {
            let shift = c * (*x - *y);
            *x -= shift;
            *y += shift;
        }
    }
}

/// Prox of `sigma * lambda2 * w_st * ||a_s - a_t||_2`, acting jointly on
/// columns `s` and `t`; all other columns pass through.
///
/// Columns move toward each other by `c = min(sigma lambda2 w_st / d, 1/2)`
/// of their difference and meet at the midpoint once `c` saturates.
pub fn prox_fusion_pair(
    b: &ParamMatrix,
    s: usize,
    t: usize,
    w_st: f64,
    lambda2: f64,
    sigma: f64,
) -> Result<ParamMatrix> {
    if s >= t || t >= b.k() {
        return Err(Error::InvalidInput(format!("fusion pair ({s}, {t}) invalid for {} columns", b.k())));
    }
    let mut out = b.as_matrix().clone();
    fusion_pair_in_place(&mut out, s, t, sigma * lambda2 * w_st);
    Ok(ParamMatrix::from_matrix_unchecked(out))
}
