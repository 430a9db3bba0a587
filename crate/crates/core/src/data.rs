//! Datasets, parameter matrices, hyperparameters and the objective.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::ops::Deref;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::WeightGraph;

/// One regression task: a design matrix and its response.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Task {
    pub fn new(id: impl Into<String>, x: DMatrix<f64>, y: DVector<f64>) -> Self {
        Task { id: id.into(), x, y }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// A validated collection of tasks sharing the feature dimension `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    tasks: Vec<Task>,
    p: usize,
}

impl TaskDataset {
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::InvalidInput("dataset has no tasks".into()))?;
        let p = first.x.ncols();
        if p == 0 {
            return Err(Error::InvalidInput("feature dimension p must be positive".into()));
        }
        let mut seen = HashMap::new();
        for (s, task) in tasks.iter().enumerate() {
            if task.x.ncols() != p {
                return Err(Error::Dimension(format!(
                    "task '{}' has {} features, expected {}",
                    task.id,
                    task.x.ncols(),
                    p
                )));
            }
            if task.y.is_empty() {
                return Err(Error::InvalidInput(format!("task '{}' has no observations", task.id)));
            }
            if task.x.nrows() != task.y.len() {
                return Err(Error::Dimension(format!(
                    "task '{}' has {} design rows but {} responses",
                    task.id,
                    task.x.nrows(),
                    task.y.len()
                )));
            }
            if task.x.iter().chain(task.y.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("task '{}' contains non-finite values", task.id)));
            }
            if let Some(prev) = seen.insert(task.id.clone(), s) {
                return Err(Error::InvalidInput(format!(
                    "duplicate task id '{}' (tasks {} and {})",
                    task.id, prev, s
                )));
            }
        }
        Ok(TaskDataset { tasks, p })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, s: usize) -> &Task {
        &self.tasks[s]
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.tasks.len()
    }

    pub fn ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.id.clone()).collect()
    }

    /// Total number of rows over all tasks.
    pub fn total_rows(&self) -> usize {
        self.tasks.iter().map(Task::n).sum()
    }

    /// `Some(n)` when every task has exactly `n` rows.
    pub fn common_n(&self) -> Option<usize> {
        let n = self.tasks[0].n();
        self.tasks.iter().all(|t| t.n() == n).then_some(n)
    }

    /// A dataset made of the selected tasks, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let tasks = indices
            .iter()
            .map(|&s| {
                self.tasks
                    .get(s)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("task index {s} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        TaskDataset::new(tasks)
    }

    /// Largest entry of `|X_s^T y_s|` over all tasks and features.
    pub fn max_abs_correlation(&self) -> f64 {
        self.tasks
            .iter()
            .map(|t| (t.x.transpose() * &t.y).amax())
            .fold(0.0, f64::max)
    }

    /// Per-feature standardization over the pooled rows of all tasks.
    ///
    /// Constant features are only centered.
    pub fn standardized(&self) -> Self {
        let total = self.total_rows() as f64;
        let mut mean = vec![0.0; self.p];
        for t in &self.tasks {
            for j in 0..self.p {
                mean[j] += t.x.column(j).sum();
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        let mut var = vec![0.0; self.p];
        for t in &self.tasks {
            for j in 0..self.p {
                var[j] += t.x.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>();
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| {
                let sd = (v / total).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let tasks = self
            .tasks
            .iter()
            .map(|t| {
                let mut x = t.x.clone();
                for j in 0..self.p {
                    x.column_mut(j).iter_mut().for_each(|v| *v = (*v - mean[j]) / scale[j]);
                }
                Task::new(t.id.clone(), x, t.y.clone())
            })
            .collect();
        TaskDataset { tasks, p: self.p }
    }
}

/// The `p x k` coefficient matrix; column `s` holds task `s`'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix(DMatrix<f64>);

impl ParamMatrix {
    pub fn zeros(p: usize, k: usize) -> Self {
        ParamMatrix(DMatrix::zeros(p, k))
    }

    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("parameter matrix contains non-finite values".into()));
        }
        Ok(ParamMatrix(values))
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidInput("no columns".into()));
        }
        ParamMatrix::from_matrix(DMatrix::from_columns(columns))
    }

    /// Wraps a matrix produced by internal numerics without re-checking finiteness.
    pub(crate) fn from_matrix_unchecked(values: DMatrix<f64>) -> Self {
        ParamMatrix(values)
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Euclidean distance between columns `s` and `t`.
    pub fn column_distance(&self, s: usize, t: usize) -> f64 {
        (self.0.column(s) - self.0.column(t)).norm()
    }

    /// A copy with columns rearranged so that new column `i` is old column `order[i]`.
    pub fn permute_columns(&self, order: &[usize]) -> Self {
        let cols: Vec<_> = order.iter().map(|&s| self.0.column(s).into_owned()).collect();
        ParamMatrix(DMatrix::from_columns(&cols))
    }

    pub fn check_shape(&self, p: usize, k: usize) -> Result<()> {
        if self.p() != p || self.k() != k {
            return Err(Error::Dimension(format!(
                "parameter matrix is {}x{}, expected {}x{}",
                self.p(),
                self.k(),
                p,
                k
            )));
        }
        Ok(())
    }
}

impl Deref for ParamMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMode {
    /// `lambda1 * sum_s ||theta_s||_1`
    #[default]
    ElementwiseL1,
    /// `lambda1 * sum_j ||theta_{j.}||_2`, the same features selected across tasks.
    RowGroupL21,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default)]
    pub sparsity_mode: SparsityMode,
}

impl Hyperparams {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        Hyperparams::with_mode(lambda1, lambda2, SparsityMode::ElementwiseL1)
    }

    pub fn with_mode(lambda1: f64, lambda2: f64, sparsity_mode: SparsityMode) -> Result<Self> {
        let hp = Hyperparams { lambda1, lambda2, sparsity_mode };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda1 must be a finite nonnegative number, got {}", self.lambda1)));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda2 must be a finite nonnegative number, got {}", self.lambda2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: ParamMatrix,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Convergence metric after each iteration.
    pub residual_history: Vec<f64>,
}

/// Sum of squared residuals over all tasks.
pub fn squared_loss(theta: &ParamMatrix, data: &TaskDataset) -> Result<f64> {
    theta.check_shape(data.p(), data.k())?;
    Ok(data
        .tasks()
        .iter()
        .enumerate()
        .map(|(s, t)| (&t.y - &t.x * theta.column(s)).norm_squared())
        .sum())
}

pub fn sparsity_penalty(theta: &ParamMatrix, mode: SparsityMode) -> f64 {
    match mode {
        SparsityMode::ElementwiseL1 => theta.iter().map(|v| v.abs()).sum(),
        SparsityMode::RowGroupL21 => theta.row_iter().map(|r| r.norm()).sum(),
    }
}

/// `sum_{s<t} w_st ||theta_s - theta_t||_2`, without the `lambda2` factor.
pub fn fusion_penalty(theta: &ParamMatrix, w: &WeightGraph) -> f64 {
    w.edges().iter().map(|e| e.w * theta.column_distance(e.s, e.t)).sum()
}

/// Value of the regularized multitask objective at `theta`.
pub fn eval_objective(theta: &ParamMatrix, data: &TaskDataset, hp: &Hyperparams, w: &WeightGraph) -> Result<f64> {
    if w.k() != data.k() {
        return Err(Error::Dimension(format!(
            "weight graph covers {} tasks, dataset has {}",
            w.k(),
            data.k()
        )));
    }
    let loss = squared_loss(theta, data)?;
    let mut value = loss + hp.lambda1 * sparsity_penalty(theta, hp.sparsity_mode);
    if hp.lambda2 > 0.0 {
        value += hp.lambda2 * fusion_penalty(theta, w);
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvSchema {
    /// Columns `task_id, y, x1..xp`; one row per observation.
    LongFormat,
    /// Columns `y1..yk, x1..xp`; every response shares the same design.
    MultiResponse,
}

pub fn load_csv(path: impl AsRef<Path>, schema: CsvSchema) -> Result<TaskDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: CsvSchema) -> Result<TaskDataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::parse("header", e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::parse("header", "missing header row"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // line 1 is the header
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(format!("line {line}"), e.to_string()))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            return Err(Error::Dimension(format!(
                "line {line} has {} fields, header has {}",
                rec.len(),
                header.len()
            )));
        }
        rows.push((line, rec));
    }
    match schema {
        CsvSchema::LongFormat => parse_long(&header, &rows),
        CsvSchema::MultiResponse => parse_multi(&header, &rows),
    }
}

fn parse_cell(value: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| Error::parse(format!("line {line}, column '{column}'"), format!("'{value}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(
            format!("line {line}, column '{column}'"),
            format!("non-finite value '{value}'"),
        ));
    }
    Ok(v)
}

fn feature_columns(header: &[String], start: usize) -> Result<usize> {
    let p = header.len() - start;
    if p == 0 {
        return Err(Error::parse("header", "no feature columns"));
    }
    for (j, name) in header[start..].iter().enumerate() {
        if !name.starts_with('x') {
            return Err(Error::parse("header", format!("column {} ('{}') should be feature x{}", start + j + 1, name, j + 1)));
        }
    }
    Ok(p)
}

fn parse_long(header: &[String], rows: &[(usize, csv::StringRecord)]) -> Result<TaskDataset> {
    if header.len() < 3 || header[0] != "task_id" || header[1] != "y" {
        return Err(Error::parse("header", "long format expects columns task_id, y, x1..xp"));
    }
    let p = feature_columns(header, 2)?;
    let mut order: Vec<String> = Vec::new();
    let mut blocks: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for (line, rec) in rows {
        let id = rec[0].to_owned();
        if id.is_empty() {
            return Err(Error::parse(format!("line {line}, column 'task_id'"), "empty task id"));
        }
        let y = parse_cell(&rec[1], *line, "y")?;
        let block = blocks.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (Vec::new(), Vec::new())
        });
        block.1.push(y);
        for j in 0..p {
            block.0.push(parse_cell(&rec[2 + j], *line, &header[2 + j])?);
        }
    }
    if order.is_empty() {
        return Err(Error::parse("body", "no data rows"));
    }
    let tasks = order
        .into_iter()
        .map(|id| {
            let (xs, ys) = blocks.remove(&id).expect("block exists for every id");
            let n = ys.len();
            Task::new(id, DMatrix::from_row_slice(n, p, &xs), DVector::from_vec(ys))
        })
        .collect();
    TaskDataset::new(tasks)
}

fn parse_multi(header: &[String], rows: &[(usize, csv::StringRecord)]) -> Result<TaskDataset> {
    let k = header.iter().take_while(|h| h.starts_with('y')).count();
    if k == 0 {
        return Err(Error::parse("header", "multi-response format expects columns y1..yk, x1..xp"));
    }
    let p = feature_columns(header, k)?;
    if rows.is_empty() {
        return Err(Error::parse("body", "no data rows; every task would be empty"));
    }
    let n = rows.len();
    let mut x = DMatrix::zeros(n, p);
    let mut ys = vec![DVector::zeros(n); k];
    for (i, (line, rec)) in rows.iter().enumerate() {
        for (s, y) in ys.iter_mut().enumerate() {
            y[i] = parse_cell(&rec[s], *line, &header[s])?;
        }
        for j in 0..p {
            x[(i, j)] = parse_cell(&rec[k + j], *line, &header[k + j])?;
        }
    }
    let tasks = ys
        .into_iter()
        .enumerate()
        .map(|(s, y)| Task::new(header[s].clone(), x.clone(), y))
        .collect();
    TaskDataset::new(tasks)
}

/// Writes a dataset in long format with 17 significant digits.
pub fn write_long_csv(data: &TaskDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["task_id".to_owned(), "y".to_owned()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    wtr.write_record(&header).map_err(|e| csv_io(path, e))?;
    for task in data.tasks() {
        for i in 0..task.n() {
            let mut rec = vec![task.id.clone(), fmt_f64(task.y[i])];
            rec.extend(task.x.row(i).iter().map(|v| fmt_f64(*v)));
            wtr.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Writes `theta` as `p` rows by `k` columns headed by the task ids.
pub fn write_theta_csv(theta: &ParamMatrix, ids: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != theta.k() {
        return Err(Error::Dimension(format!("{} task ids for {} columns", ids.len(), theta.k())));
    }
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    wtr.write_record(ids).map_err(|e| csv_io(path, e))?;
    for row in theta.row_iter() {
        wtr.write_record(row.iter().map(|v| fmt_f64(*v))).map_err(|e| csv_io(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Reads a matrix written by [`write_theta_csv`]; returns the ids and the values.
pub fn read_theta_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, ParamMatrix)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let ids: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::parse("header", e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut values = Vec::new();
    let mut p = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(format!("line {line}"), e.to_string()))?;
        for (s, cell) in rec.iter().enumerate() {
            values.push(parse_cell(cell, line, &ids[s])?);
        }
        p += 1;
    }
    let theta = ParamMatrix::from_matrix(DMatrix::from_row_slice(p, ids.len(), &values))?;
    Ok((ids, theta))
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}
