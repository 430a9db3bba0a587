//! Sparse pairwise task weights for the fusion penalty.

use std::fs::File;
use std::path::Path;

use crate::data::TaskDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub s: usize,
    pub t: usize,
    pub w: f64,
}

/// Positive weights stored once per unordered task pair, sorted by `(s, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGraph {
    k: usize,
    edges: Vec<Edge>,
}

impl WeightGraph {
    /// Validates and sorts `edges`. Zero weights are dropped.
    pub fn new(k: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut kept = Vec::new();
        for e in edges {
            if e.s >= e.t {
                return Err(Error::InvalidWeights(format!("edge ({}, {}) must satisfy s < t", e.s, e.t)));
            }
            if e.t >= k {
                return Err(Error::InvalidWeights(format!("edge ({}, {}) out of range for {} tasks", e.s, e.t, k)));
            }
            if !e.w.is_finite() || e.w < 0.0 {
                return Err(Error::InvalidWeights(format!("edge ({}, {}) has invalid weight {}", e.s, e.t, e.w)));
            }
            if e.w > 0.0 {
                kept.push(e);
            }
        }
        kept.sort_by_key(|e| (e.s, e.t));
        if let Some(pair) = kept.windows(2).find(|p| (p[0].s, p[0].t) == (p[1].s, p[1].t)) {
            return Err(Error::InvalidWeights(format!("duplicate edge ({}, {})", pair[0].s, pair[0].t)));
        }
        Ok(WeightGraph { k, edges: kept })
    }

    pub fn empty(k: usize) -> Self {
        WeightGraph { k, edges: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn weight(&self, s: usize, t: usize) -> f64 {
        let (a, b) = if s < t { (s, t) } else { (t, s) };
        self.edges
            .binary_search_by_key(&(a, b), |e| (e.s, e.t))
            .map(|i| self.edges[i].w)
            .unwrap_or(0.0)
    }

    /// True when every task is reachable from task 0 through positive edges.
    pub fn is_connected(&self) -> bool {
        if self.k <= 1 {
            return true;
        }
        let mut uf = UnionFind::new(self.k);
        for e in &self.edges {
            uf.union(e.s, e.t);
        }
        (1..self.k).all(|s| uf.find(s) == uf.find(0))
    }

    /// Relabels tasks: old task `order[i]` becomes task `i`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut pos = vec![usize::MAX; self.k];
        for (i, &s) in order.iter().enumerate() {
            pos[s] = i;
        }
        let edges = self.edges.iter().map(|e| {
            let (a, b) = (pos[e.s], pos[e.t]);
            Edge { s: a.min(b), t: a.max(b), w: e.w }
        });
        WeightGraph::new(self.k, edges)
    }
}

/// Complete graph with unit weights.
pub fn uniform_weights(k: usize) -> WeightGraph {
    let edges = (0..k).flat_map(|s| (s + 1..k).map(move |t| Edge { s, t, w: 1.0 })).collect();
    WeightGraph { k, edges }
}

/// k-nearest-neighbour weights on response vectors.
///
/// Edge `(s, t)` is present when `t` is among the `kappa` tasks closest to
/// `s` in `||y_s - y_t||`, or the other way round, and carries weight
/// `exp(-phi * ||y_s - y_t||^2)`. Distance ties go to the lower task index.
pub fn knn_weights(data: &TaskDataset, kappa: usize, phi: f64) -> Result<WeightGraph> {
    let k = data.k();
    if data.common_n().is_none() {
        return Err(Error::InvalidInput(
            "k-NN weights need equal-length responses for every task; supply weights explicitly".into(),
        ));
    }
    if kappa == 0 || kappa >= k {
        return Err(Error::InvalidInput(format!("kappa must be in [1, {}), got {}", k, kappa)));
    }
    if !(phi >= 0.0 && phi.is_finite()) {
        return Err(Error::InvalidInput(format!("phi must be nonnegative, got {phi}")));
    }
    let mut dist = vec![vec![0.0; k]; k];
    for s in 0..k {
        for t in s + 1..k {
            let d = (&data.task(s).y - &data.task(t).y).norm();
            dist[s][t] = d;
            dist[t][s] = d;
        }
    }
    let mut adjacent = vec![vec![false; k]; k];
    for s in 0..k {
        let mut others: Vec<usize> = (0..k).filter(|&t| t != s).collect();
        others.sort_by(|&a, &b| dist[s][a].total_cmp(&dist[s][b]).then(a.cmp(&b)));
        for &t in &others[..kappa] {
            adjacent[s][t] = true;
            adjacent[t][s] = true;
        }
    }
    let mut edges = Vec::new();
    for s in 0..k {
        for t in s + 1..k {
            if adjacent[s][t] {
                edges.push(Edge { s, t, w: (-phi * dist[s][t] * dist[s][t]).exp() });
            }
        }
    }
    WeightGraph::new(k, edges)
}

/// Reads `s,t,w` rows (optional header) for a problem with `k` tasks.
pub fn load_weights(path: impl AsRef<Path>, k: usize) -> Result<WeightGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights(file, k)
}

pub fn read_weights<R: std::io::Read>(reader: R, k: usize) -> Result<WeightGraph> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut edges = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::parse(format!("line {line}"), e.to_string()))?;
        if i == 0 && rec.iter().eq(["s", "t", "w"]) {
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::parse(format!("line {line}"), format!("expected 3 fields s,t,w, found {}", rec.len())));
        }
        let idx = |j: usize, name: &str| -> Result<usize> {
            rec[j]
                .parse()
                .map_err(|_| Error::parse(format!("line {line}, column '{name}'"), format!("'{}' is not a task index", &rec[j])))
        };
        let (s, t) = (idx(0, "s")?, idx(1, "t")?);
        let w: f64 = rec[2]
            .parse()
            .map_err(|_| Error::parse(format!("line {line}, column 'w'"), format!("'{}' is not a number", &rec[2])))?;
        edges.push(Edge { s, t, w });
    }
    WeightGraph::new(k, edges)
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins the sets; the smaller root becomes the representative.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
        true
    }
}
