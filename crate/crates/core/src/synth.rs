//! Synthetic grouped-task regression benchmark.
//!
//! Tasks come in groups; tasks within a group share a sparse support (and,
//! in `equal` mode, identical coefficients). Supports of different groups
//! are disjoint. Randomness comes from ChaCha8 seeded with `seed`, drawn in
//! a fixed order: feature shuffle, coefficients, then train, validation and
//! test splits (design before noise within each split).

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{write_long_csv, ParamMatrix, Task, TaskDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CoefMode {
    /// Every support coefficient equals `value`.
    Equal { value: f64 },
    /// Each task draws its support coefficients as `0.5 + N(0, 1) / 3`.
    Perturbed,
}

impl Default for CoefMode {
    fn default() -> Self {
        CoefMode::Equal { value: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub p: usize,
    pub groups: usize,
    pub tasks_per_group: usize,
    pub support_size: usize,
    pub coef_mode: CoefMode,
    pub noise_sd: f64,
    /// One design matrix per split shared by all tasks (multi-response);
    /// otherwise every task draws its own.
    pub shared_design: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 20,
            p: 50,
            groups: 3,
            tasks_per_group: 5,
            support_size: 5,
            coef_mode: CoefMode::default(),
            noise_sd: 1.0,
            shared_design: true,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn k(&self) -> usize {
        self.groups * self.tasks_per_group
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.groups == 0 || self.tasks_per_group == 0 {
            return Err(Error::InvalidInput("n, p, groups and tasks_per_group must be positive".into()));
        }
        if self.support_size > self.p {
            return Err(Error::InvalidInput(format!("support_size {} exceeds p = {}", self.support_size, self.p)));
        }
        if self.groups * self.support_size > self.p {
            return Err(Error::InvalidInput(format!(
                "{} disjoint supports of size {} do not fit in p = {}",
                self.groups, self.support_size, self.p
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidInput(format!("noise_sd must be nonnegative, got {}", self.noise_sd)));
        }
        if let CoefMode::Equal { value } = self.coef_mode {
            if !value.is_finite() {
                return Err(Error::InvalidInput("coefficient value must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub train: TaskDataset,
    pub validation: TaskDataset,
    pub test: TaskDataset,
    pub true_theta: ParamMatrix,
    /// Task indices of each true group.
    pub true_groups: Vec<Vec<usize>>,
    pub supports: Vec<Vec<usize>>,
}

/// Ground truth written next to the generated CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SynthSpec,
    pub task_ids: Vec<String>,
    pub p: usize,
    /// Column-major `p x k`.
    pub true_theta: Vec<f64>,
    pub true_groups: Vec<Vec<usize>>,
    pub supports: Vec<Vec<usize>>,
}

pub fn task_id(s: usize) -> String {
    format!("task{s:02}")
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // filled row by row so the stream order matches reading a CSV
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (k, p) = (spec.k(), spec.p);

    let mut features: Vec<usize> = (0..p).collect();
    features.shuffle(&mut rng);
    let supports: Vec<Vec<usize>> = (0..spec.groups)
        .map(|g| {
            let mut sup = features[g * spec.support_size..(g + 1) * spec.support_size].to_vec();
            sup.sort_unstable();
            sup
        })
        .collect();
    let true_groups: Vec<Vec<usize>> = (0..spec.groups)
        .map(|g| (g * spec.tasks_per_group..(g + 1) * spec.tasks_per_group).collect())
        .collect();

    let mut theta = DMatrix::zeros(p, k);
    for (g, group) in true_groups.iter().enumerate() {
        for &s in group {
            for &j in &supports[g] {
                theta[(j, s)] = match spec.coef_mode {
                    CoefMode::Equal { value } => value,
                    CoefMode::Perturbed => 0.5 + rng.sample::<f64, _>(StandardNormal) / 3.0,
                };
            }
        }
    }

    let split = |rng: &mut ChaCha8Rng| -> Result<TaskDataset> {
        let shared = spec.shared_design.then(|| normal_matrix(rng, spec.n, p));
        let tasks = (0..k)
            .map(|s| {
                let x = match &shared {
                    Some(x) => x.clone(),
                    None => normal_matrix(rng, spec.n, p),
                };
                let noise: DVector<f64> = DVector::from_fn(spec.n, |_, _| rng.sample::<f64, _>(StandardNormal) * spec.noise_sd);
                let y = &x * theta.column(s) + noise;
                Task::new(task_id(s), x, y)
            })
            .collect();
        TaskDataset::new(tasks)
    };
    let train = split(&mut rng)?;
    let validation = split(&mut rng)?;
    let test = split(&mut rng)?;

    Ok(SynthInstance {
        train,
        validation,
        test,
        true_theta: ParamMatrix::from_matrix(theta)?,
        true_groups,
        supports,
    })
}

impl SynthInstance {
    pub fn truth(&self, spec: &SynthSpec) -> Truth {
        Truth {
            spec: spec.clone(),
            task_ids: self.train.ids(),
            p: self.true_theta.p(),
            true_theta: self.true_theta.as_slice().to_vec(),
            true_groups: self.true_groups.clone(),
            supports: self.supports.clone(),
        }
    }

    /// Writes `train.csv`, `val.csv`, `test.csv` (long format) and `truth.json`.
    pub fn write(&self, spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_long_csv(&self.train, dir.join("train.csv"))?;
        write_long_csv(&self.validation, dir.join("val.csv"))?;
        write_long_csv(&self.test, dir.join("test.csv"))?;
        let truth = serde_json::to_string_pretty(&self.truth(spec))?;
        let path = dir.join("truth.json");
        fs::write(&path, truth).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dimensions() {
        let inst = generate(&SynthSpec::default()).unwrap();
        for d in [&inst.train, &inst.validation, &inst.test] {
            assert_eq!(d.k(), 15);
            assert_eq!(d.p(), 50);
            assert!(d.tasks().iter().all(|t| t.x.shape() == (20, 50)));
        }
        assert_eq!(inst.true_groups.len(), 3);
    }

    #[test]
    fn seeded_determinism() {
        let spec = SynthSpec { seed: 42, ..Default::default() };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 43, ..Default::default() };
        assert_ne!(generate(&spec).unwrap().train, generate(&other).unwrap().train);
    }

    #[test]
    fn equal_mode_columns_identical_within_groups() {
        let inst = generate(&SynthSpec { seed: 3, ..Default::default() }).unwrap();
        for group in &inst.true_groups {
            for &s in group {
                assert_eq!(inst.true_theta.column(s), inst.true_theta.column(group[0]));
            }
        }
        let mut all: Vec<usize> = inst.supports.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 15);
        assert_eq!(inst.true_theta.iter().filter(|v| **v != 0.0).count(), 75);
    }

    #[test]
    fn perturbed_mode_shares_support_only() {
        let spec = SynthSpec { coef_mode: CoefMode::Perturbed, seed: 5, ..Default::default() };
        let inst = generate(&spec).unwrap();
        let g = &inst.true_groups[0];
        assert_ne!(inst.true_theta.column(g[0]), inst.true_theta.column(g[1]));
        for &s in g {
            for j in 0..spec.p {
                assert_eq!(inst.true_theta[(j, s)] != 0.0, inst.supports[0].contains(&j));
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SynthSpec { support_size: 51, ..Default::default() }).is_err());
        assert!(generate(&SynthSpec { support_size: 20, ..Default::default() }).is_err());
        assert!(generate(&SynthSpec { groups: 0, ..Default::default() }).is_err());
        assert!(generate(&SynthSpec { noise_sd: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn noiseless_group_recovered_by_pooled_least_squares() {
        let spec = SynthSpec { noise_sd: 0.0, shared_design: false, seed: 11, ..Default::default() };
        let inst = generate(&spec).unwrap();
        for (g, group) in inst.true_groups.iter().enumerate() {
            let sup = &inst.supports[g];
            let rows = group.len() * spec.n;
            let mut x = DMatrix::zeros(rows, sup.len());
            let mut y = DVector::zeros(rows);
            for (b, &s) in group.iter().enumerate() {
                let t = inst.train.task(s);
                for i in 0..spec.n {
                    for (c, &j) in sup.iter().enumerate() {
                        x[(b * spec.n + i, c)] = t.x[(i, j)];
                    }
                    y[b * spec.n + i] = t.y[i];
                }
            }
            let coef = x.tr_mul(&x).lu().solve(&x.tr_mul(&y)).unwrap();
            for (c, &j) in sup.iter().enumerate() {
                assert!((coef[c] - inst.true_theta[(j, group[0])]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn noise_level_matches_spec() {
        let spec = SynthSpec { seed: 9, ..Default::default() };
        let inst = generate(&spec).unwrap();
        let mut ss = 0.0;
        let mut count = 0;
        for (s, t) in inst.train.tasks().iter().enumerate() {
            let r = &t.y - &t.x * inst.true_theta.column(s);
            ss += r.norm_squared();
            count += r.len();
        }
        let var = ss / count as f64;
        assert!((var - 1.0).abs() < 0.2, "{var}");
    }
}
