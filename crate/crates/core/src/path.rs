//! `lambda2` regularization paths and the task dendrogram they induce.
//!
//! As `lambda2` grows, task columns fuse. A path is a sequence of warm
//! started fits over an increasing grid; the dendrogram records, for every
//! pair of clusters, the first grid value at which they became one.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{FitResult, Hyperparams, ParamMatrix, SparsityMode, TaskDataset};
use crate::error::{Error, Result};
use crate::solver::{fit_from_state, ProximalDecomposition, SolverConfig};
use crate::weights::{UnionFind, WeightGraph};

/// Largest `lambda2` reached when escalating past the grid.
pub const LAMBDA2_CAP: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub lambda2_grid: Vec<f64>,
    pub lambda1: f64,
    /// Columns `s, t` are fused when `||theta_s - theta_t|| / sqrt(p) <= merge_tol`.
    pub merge_tol: f64,
    /// Keep doubling `lambda2` past the grid until one cluster remains
    /// (or [`LAMBDA2_CAP`] is passed).
    pub escalate: bool,
    #[serde(default)]
    pub sparsity_mode: SparsityMode,
}

impl PathSpec {
    pub fn new(lambda2_grid: Vec<f64>, lambda1: f64) -> Self {
        PathSpec { lambda2_grid, lambda1, merge_tol: 1e-4, escalate: false, sparsity_mode: SparsityMode::ElementwiseL1 }
    }

    /// `points` log-spaced values spanning `[lo, hi]`.
    pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
        log_space(lo, hi, points)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda2_grid.is_empty() {
            return Err(Error::InvalidInput("lambda2 grid is empty".into()));
        }
        if self.lambda2_grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("lambda2 grid values must be finite and nonnegative".into()));
        }
        if self.lambda2_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("lambda2 grid must be strictly increasing".into()));
        }
        if !(self.merge_tol > 0.0) {
            return Err(Error::InvalidInput(format!("merge_tol must be positive, got {}", self.merge_tol)));
        }
        Hyperparams::new(self.lambda1, 0.0).map(|_| ())
    }
}

pub fn log_space(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathPoint {
    pub lambda2: f64,
    pub fit: FitResult,
}

/// Fits every grid point in order, each resuming from the previous solver state.
pub fn compute_path(data: &TaskDataset, w: &WeightGraph, spec: &PathSpec, cfg: &SolverConfig) -> Result<Vec<PathPoint>> {
    spec.validate()?;
    let mut points: Vec<PathPoint> = Vec::new();
    let mut state = None;
    let run = |lambda2: f64, state: &mut Option<crate::solver::SolverState>| -> Result<PathPoint> {
        let hp = Hyperparams::with_mode(spec.lambda1, lambda2, spec.sparsity_mode)?;
        let (fit, next) = match state.take() {
            Some(prev) => fit_from_state(data, &hp, w, cfg, prev),
            None => ProximalDecomposition::new(data, hp, w, *cfg, None)?.run_with_state(),
        }
        .map_err(|e| match e {
            Error::Divergence { iteration, .. } => Error::Divergence { iteration, lambda2: Some(lambda2) },
            other => other,
        })?;
        *state = Some(next);
        Ok(PathPoint { lambda2, fit })
    };
    for &lambda2 in &spec.lambda2_grid {
        points.push(run(lambda2, &mut state)?);
    }
    if spec.escalate {
        let mut lambda2 = spec.lambda2_grid.last().copied().unwrap_or(1.0).max(1e-8);
        while cluster_count(&points.last().expect("nonempty grid").fit.theta, spec.merge_tol) > 1 && lambda2 < LAMBDA2_CAP {
            lambda2 = (lambda2 * 2.0).min(LAMBDA2_CAP);
            points.push(run(lambda2, &mut state)?);
        }
    }
    Ok(points)
}

/// Number of connected components when columns within `merge_tol` (normalized) are joined.
pub fn cluster_count(theta: &ParamMatrix, merge_tol: f64) -> usize {
    let k = theta.k();
    let d = normalized_distances(theta);
    let mut uf = UnionFind::new(k);
    let mut count = k;
    for s in 0..k {
        for t in s + 1..k {
            if d[condensed_index(k, s, t)] <= merge_tol && uf.union(s, t) {
                count -= 1;
            }
        }
    }
    count
}

/// Condensed pairwise column distances `||theta_s - theta_t|| / sqrt(p)`, `s < t`, row-major.
pub fn normalized_distances(theta: &ParamMatrix) -> Vec<f64> {
    let (p, k) = (theta.p(), theta.k());
    let scale = (p as f64).sqrt();
    let mut out = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for s in 0..k {
        for t in s + 1..k {
            out.push(theta.column_distance(s, t) / scale);
        }
    }
    out
}

pub fn condensed_index(k: usize, s: usize, t: usize) -> usize {
    debug_assert!(s < t && t < k);
    s * k - s * (s + 1) / 2 + (t - s - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// `lambda2` for path trees, linkage distance for agglomerative trees.
    pub height: f64,
    pub left: usize,
    pub right: usize,
    pub new_cluster: usize,
}

/// Binary merge tree over `k` leaves. Leaves are clusters `0..k`; the
/// `i`-th merge creates cluster `k + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
    /// Raw splits suppressed by the monotone closure.
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl Dendrogram {
    pub fn k(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_complete(&self) -> bool {
        self.merges.len() + 1 == self.k() || self.k() == 0
    }

    /// Member leaves of every cluster id, in id order.
    fn members(&self) -> Vec<Vec<usize>> {
        let mut members: Vec<Vec<usize>> = (0..self.k()).map(|s| vec![s]).collect();
        for m in &self.merges {
            let mut joined = members[m.left].clone();
            joined.extend_from_slice(&members[m.right]);
            joined.sort_unstable();
            members.push(joined);
        }
        members
    }

    /// Checks the tree invariants: non-decreasing heights and each cluster
    /// used as a child at most once.
    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if self.merges.len() >= k.max(1) {
            return Err(Error::InvalidInput(format!("{} merges for {} leaves", self.merges.len(), k)));
        }
        let mut used = vec![false; k + self.merges.len()];
        for (i, m) in self.merges.iter().enumerate() {
            if m.new_cluster != k + i || m.left >= k + i || m.right >= k + i || m.left == m.right {
                return Err(Error::InvalidInput(format!("merge {i} has invalid cluster ids")));
            }
            for c in [m.left, m.right] {
                if std::mem::replace(&mut used[c], true) {
                    return Err(Error::InvalidInput(format!("cluster {c} merged twice")));
                }
            }
            if i > 0 && m.height < self.merges[i - 1].height {
                return Err(Error::InvalidInput(format!("merge {i} height decreases")));
            }
        }
        Ok(())
    }

    /// Serializes the tree in Newick format. Internal node heights are
    /// `ln(height)` and leaves sit at `ln(leaf_height)`; branch lengths are
    /// height differences. Use [`Dendrogram::to_newick_linear`] for trees
    /// whose heights may be zero.
    pub fn to_newick(&self, leaf_height: f64) -> String {
        let base = leaf_height.max(f64::MIN_POSITIVE).ln();
        self.newick_with(|h| h.max(f64::MIN_POSITIVE).ln().max(base), base)
    }

    pub fn to_newick_linear(&self) -> String {
        self.newick_with(|h| h, 0.0)
    }

    fn newick_with(&self, scale: impl Fn(f64) -> f64, leaf: f64) -> String {
        let k = self.k();
        let mut height = vec![leaf; k + self.merges.len()];
        let mut text: Vec<String> = self.leaves.iter().map(|l| newick_label(l)).collect();
        for m in &self.merges {
            let h = scale(m.height);
            let node = format!(
                "({}:{},{}:{})",
                text[m.left],
                fmt_len(h - height[m.left]),
                text[m.right],
                fmt_len(h - height[m.right])
            );
            height[m.new_cluster] = h;
            text.push(node);
        }
        // roots of a forest are joined under an unlabelled node with zero-length branches
        let used: BTreeSet<usize> = self.merges.iter().flat_map(|m| [m.left, m.right]).collect();
        let roots: Vec<&String> = (0..text.len()).filter(|i| !used.contains(i)).map(|i| &text[i]).collect();
        match roots.as_slice() {
            [single] => format!("{single};"),
            many => format!("({});", many.iter().map(|r| format!("{r}:0")).collect::<Vec<_>>().join(",")),
        }
    }
}

fn fmt_len(v: f64) -> String {
    let v = if v.abs() < 1e-300 { 0.0 } else { v };
    format!("{v:.17}").trim_end_matches('0').trim_end_matches('.').to_owned()
}

fn newick_label(label: &str) -> String {
    if label.chars().any(|c| "()[]':;, \t".contains(c)) {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_owned()
    }
}

/// Builds the dendrogram from a path of fits.
pub fn extract_tree(path: &[PathPoint], merge_tol: f64, leaves: Vec<String>) -> Result<Dendrogram> {
    let first = path.first().ok_or_else(|| Error::InvalidInput("path is empty".into()))?;
    let k = first.fit.theta.k();
    let points: Vec<(f64, Vec<f64>)> = path
        .iter()
        .map(|pt| (pt.lambda2, normalized_distances(&pt.fit.theta)))
        .collect();
    extract_tree_from_distances(&points, k, merge_tol, leaves)
}

/// Builds the dendrogram from per-point condensed normalized distances.
///
/// At each grid point the raw clusters are the connected components of
/// `{(s, t) : d_st <= merge_tol}`. Clusters never split once merged; every
/// join of previously distinct clusters is recorded at that grid value,
/// ordered by smallest member index.
pub fn extract_tree_from_distances(
    points: &[(f64, Vec<f64>)],
    k: usize,
    merge_tol: f64,
    leaves: Vec<String>,
) -> Result<Dendrogram> {
    if points.is_empty() {
        return Err(Error::InvalidInput("path is empty".into()));
    }
    if leaves.len() != k {
        return Err(Error::Dimension(format!("{} leaf labels for {} tasks", leaves.len(), k)));
    }
    let pairs = k * k.saturating_sub(1) / 2;
    let mut merges = Vec::new();
    let mut diagnostics = Vec::new();
    // cluster id currently representing each closed-cluster root
    let mut closed = UnionFind::new(k);
    let mut cluster_id: Vec<usize> = (0..k).collect();
    let mut previous_raw: Option<Vec<usize>> = None;

    for (lambda2, dist) in points {
        if dist.len() != pairs {
            return Err(Error::Dimension(format!("expected {} pairwise distances, found {}", pairs, dist.len())));
        }
        let mut raw = UnionFind::new(k);
        for s in 0..k {
            for t in s + 1..k {
                if dist[condensed_index(k, s, t)] <= merge_tol {
                    raw.union(s, t);
                }
            }
        }
        let raw_root: Vec<usize> = (0..k).map(|s| raw.find(s)).collect();
        if let Some(prev) = &previous_raw {
            for s in 0..k {
                for t in s + 1..k {
                    if prev[s] == prev[t] && raw_root[s] != raw_root[t] {
                        diagnostics.push(format!("raw split of tasks {s} and {t} at lambda2 = {lambda2}"));
                    }
                }
            }
        }
        // raw roots are the smallest member of their component, so iterating
        // members in index order visits components by smallest member
        for s in 0..k {
            let root = raw_root[s];
            if root == s {
                continue;
            }
            let (a, b) = (closed.find(root), closed.find(s));
            if a != b {
                let (lo, hi) = (a.min(b), a.max(b));
                let new_cluster = k + merges.len();
                merges.push(Merge { height: *lambda2, left: cluster_id[lo], right: cluster_id[hi], new_cluster });
                closed.union(lo, hi);
                cluster_id[lo] = new_cluster;
            }
        }
        previous_raw = Some(raw_root);
    }
    let tree = Dendrogram { leaves, merges, diagnostics };
    tree.validate()?;
    Ok(tree)
}

/// Partition into `g` clusters by undoing the last `g - 1` merges of a
/// complete tree. Clusters are sorted member lists, ordered by smallest member.
pub fn cut_tree(tree: &Dendrogram, g: usize) -> Result<Vec<Vec<usize>>> {
    let k = tree.k();
    if g == 0 || g > k {
        return Err(Error::InvalidInput(format!("cannot cut {k} tasks into {g} clusters")));
    }
    let needed = k - g;
    if tree.merges.len() < needed {
        return Err(Error::IncompleteTree { merges: tree.merges.len(), groups: g, needed });
    }
    Ok(partition_after(tree, needed))
}

/// Clusters after applying the first `count` merges.
pub fn partition_after(tree: &Dendrogram, count: usize) -> Vec<Vec<usize>> {
    let k = tree.k();
    let members = tree.members();
    let mut alive = vec![true; k + count];
    for m in &tree.merges[..count] {
        alive[m.left] = false;
        alive[m.right] = false;
    }
    let mut out: Vec<Vec<usize>> = (0..k + count).filter(|&c| alive[c]).map(|c| members[c].clone()).collect();
    out.sort_by_key(|c| c[0]);
    out
}

/// Clusters at each grid height after monotone closure, one partition per distinct merge height.
pub fn partitions_by_height(tree: &Dendrogram) -> Vec<(f64, Vec<Vec<usize>>)> {
    let mut out = Vec::new();
    for (i, m) in tree.merges.iter().enumerate() {
        let last_at_height = tree.merges.get(i + 1).is_none_or(|next| next.height != m.height);
        if last_at_height {
            out.push((m.height, partition_after(tree, i + 1)));
        }
    }
    out
}

/// On-disk form of a path: grid, per-point summaries, and either the full
/// parameter matrices or only the condensed distances needed for trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFile {
    pub task_ids: Vec<String>,
    pub p: usize,
    pub lambda1: f64,
    pub points: Vec<PathFilePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFilePoint {
    pub lambda2: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Column-major `p x k` values, absent in light files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    pub distances: Vec<f64>,
}

impl PathFile {
    pub fn new(path: &[PathPoint], task_ids: Vec<String>, lambda1: f64, light: bool) -> Result<Self> {
        let p = path.first().map(|pt| pt.fit.theta.p()).unwrap_or(0);
        if let Some(pt) = path.iter().find(|pt| pt.fit.theta.k() != task_ids.len()) {
            return Err(Error::Dimension(format!("{} task ids for {} columns", task_ids.len(), pt.fit.theta.k())));
        }
        let points = path
            .iter()
            .map(|pt| PathFilePoint {
                lambda2: pt.lambda2,
                objective: pt.fit.objective,
                iterations: pt.fit.iterations,
                converged: pt.fit.converged,
                theta: (!light).then(|| pt.fit.theta.as_slice().to_vec()),
                distances: normalized_distances(&pt.fit.theta),
            })
            .collect();
        Ok(PathFile { task_ids, p, lambda1, points })
    }

    pub fn theta(&self, i: usize) -> Option<Result<ParamMatrix>> {
        let values = self.points.get(i)?.theta.as_ref()?;
        let k = self.task_ids.len();
        if values.len() != self.p * k {
            return Some(Err(Error::Dimension(format!("point {i} stores {} values, expected {}", values.len(), self.p * k))));
        }
        Some(ParamMatrix::from_matrix(nalgebra::DMatrix::from_column_slice(self.p, k, values)))
    }

    pub fn tree(&self, merge_tol: f64) -> Result<Dendrogram> {
        let points: Vec<(f64, Vec<f64>)> = self.points.iter().map(|pt| (pt.lambda2, pt.distances.clone())).collect();
        extract_tree_from_distances(&points, self.task_ids.len(), merge_tol, self.task_ids.clone())
    }
}
