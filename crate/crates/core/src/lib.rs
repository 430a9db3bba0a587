//! Multitask sparse linear regression with a convex task-clustering penalty.
//!
//! Each task `s` has its own design `X_s` and response `y_s`; the estimator
//! minimizes
//!
//! ```text
//! sum_s ||y_s - X_s theta_s||^2 + lambda1 * sum_s ||theta_s||_1
//!     + lambda2 * sum_{s<t} w_st ||theta_s - theta_t||_2
//! ```
//!
//! over the `p x k` parameter matrix whose columns are the task coefficient
//! vectors. The fusion term pulls task columns together until they coincide
//! exactly; sweeping `lambda2` therefore produces a hierarchy of tasks.
//!
//! The crate is organized as:
//!
//! * [`data`]: datasets, parameters, CSV ingestion and the objective.
//! * [`weights`]: sparse pairwise task weights (k-NN, uniform, from file).
//! * [`prox`]: closed-form proximal operators of each objective term.
//! * [`solver`]: the parallel proximal decomposition solver.
//! * [`path`]: `lambda2` paths with warm starts, dendrogram extraction.
//! * [`baselines`]: coordinate-descent lasso and the comparison methods.
//! * [`synth`]: the grouped-task synthetic benchmark generator.
//! * [`cv`]: validation-based selection, RMSE and the benchmark harness.
//! * [`cli`]: the `fusemtl` command-line front-end.

pub mod baselines;
pub mod cli;
pub mod cv;
pub mod data;
pub mod error;
pub mod path;
pub mod prox;
pub mod solver;
pub mod synth;
pub mod weights;

pub use data::{eval_objective, FitResult, Hyperparams, ParamMatrix, SparsityMode, Task, TaskDataset};
pub use error::{Error, Result};
pub use path::{Dendrogram, PathSpec};
pub use solver::{fit, fit_warm, SolverConfig};
pub use weights::WeightGraph;
