mod common;

use common::*;
use fusemtl::baselines::{lasso_cd, lasso_objective, pooled_lasso, single_task_baseline_with, LassoOptions};
use fusemtl::solver::{fit_from_state, ProximalDecomposition, TolMetric};
use fusemtl::weights::{knn_weights, uniform_weights, Edge, WeightGraph};
use fusemtl::{eval_objective, fit, fit_warm, Hyperparams, ParamMatrix, SolverConfig, SparsityMode, TaskDataset};
use proptest::prelude::*;

fn tight(data: &TaskDataset, w: &WeightGraph) -> SolverConfig {
    SolverConfig { tol: 1e-11, max_iter: 200_000, ..SolverConfig::default() }.with_scaled_gamma(data, w)
}

fn lasso_opts() -> LassoOptions {
    LassoOptions { tol: 1e-10, max_iter: 100_000 }
}

#[test]
fn unpenalized_fit_is_per_task_least_squares() {
    let mut rng = rng(10);
    let data = random_dataset(&mut rng, 3, 4, 12);
    let w = uniform_weights(3);
    let res = fit(&data, &Hyperparams::new(0.0, 0.0).unwrap(), &w, &tight(&data, &w), None).unwrap();
    assert!(res.converged);
    for (s, t) in data.tasks().iter().enumerate() {
        let beta = ols(&t.x, &t.y);
        for j in 0..4 {
            assert!((res.theta[(j, s)] - beta[j]).abs() < 1e-6, "task {s}");
        }
    }
}

#[test]
fn single_task_reduces_to_lasso() {
    let mut rng = rng(11);
    let data = random_dataset(&mut rng, 1, 6, 10);
    let w = WeightGraph::empty(1);
    let lambda1 = 1.5;
    let res = fit(&data, &Hyperparams::new(lambda1, 7.0).unwrap(), &w, &tight(&data, &w), None).unwrap();
    let t = data.task(0);
    let oracle = lasso_cd(&t.x, &t.y, lambda1, 1e-10, 100_000).unwrap();
    assert!((res.objective - oracle.objective).abs() < 1e-8);
}

#[test]
fn zero_fusion_matches_single_task_baseline() {
    let mut rng = rng(12);
    for _ in 0..5 {
        let data = random_dataset(&mut rng, 3, 5, 7);
        let w = uniform_weights(3);
        let hp = Hyperparams::new(0.8, 0.0).unwrap();
        let res = fit(&data, &hp, &w, &tight(&data, &w), None).unwrap();
        let base = single_task_baseline_with(&data, 0.8, lasso_opts()).unwrap();
        let base_obj = eval_objective(&base, &data, &hp, &w).unwrap();
        assert!((res.objective - base_obj).abs() < 1e-6, "{} vs {}", res.objective, base_obj);
    }
}

#[test]
fn huge_fusion_gives_pooled_lasso() {
    let mut rng = rng(13);
    let data = random_dataset(&mut rng, 4, 5, 6);
    let w = WeightGraph::new(4, (0..3).map(|s| Edge { s, t: s + 1, w: 1.0 })).unwrap();
    assert!(w.is_connected());
    let lambda1 = 1.0;
    let hp = Hyperparams::new(lambda1, 1e6).unwrap();
    let res = fit(&data, &hp, &w, &tight(&data, &w), None).unwrap();
    for s in 1..4 {
        assert!(res.theta.column_distance(0, s) < 1e-6);
    }
    let pooled = pooled_lasso(&data, lambda1, lasso_opts()).unwrap();
    let mean = res.theta.column_mean();
    let ours = pooled_objective(&data, &mean, lambda1);
    assert!((ours - pooled.objective).abs() < 1e-6, "{ours} vs {}", pooled.objective);
}

#[test]
fn row_group_mode_matches_subgradient_oracle() {
    let mut rng = rng(14);
    let data = random_dataset(&mut rng, 3, 4, 6);
    let w = WeightGraph::empty(3);
    let hp = Hyperparams::with_mode(2.0, 0.0, SparsityMode::RowGroupL21).unwrap();
    let res = fit(&data, &hp, &w, &tight(&data, &w), None).unwrap();
    let (oracle, _) = subgradient_oracle(&data, &hp, &w, 200_000);
    assert!(res.objective <= oracle + 1e-4, "{} vs {}", res.objective, oracle);
}

#[test]
fn converged_fit_is_a_fixed_point() {
    let mut rng = rng(15);
    let data = random_dataset(&mut rng, 4, 5, 8);
    let w = uniform_weights(4);
    let hp = Hyperparams::new(0.5, 0.7).unwrap();
    let cfg = SolverConfig::default().with_scaled_gamma(&data, &w);
    let (res, state) = ProximalDecomposition::new(&data, hp, &w, cfg, None).unwrap().run_with_state().unwrap();
    assert!(res.converged);
    let one = SolverConfig { max_iter: 1, ..cfg };
    let (next, _) = fit_from_state(&data, &hp, &w, &one, state).unwrap();
    let change = (next.theta.as_matrix() - res.theta.as_matrix()).norm();
    assert!(change <= cfg.tol * res.theta.as_matrix().norm().max(1.0), "{change}");
}

#[test]
fn residual_tail_stays_below_ten_times_final() {
    let mut rng = rng(16);
    let data = random_dataset(&mut rng, 4, 6, 8);
    let w = uniform_weights(4);
    let cfg = SolverConfig::default().with_scaled_gamma(&data, &w);
    let res = fit(&data, &Hyperparams::new(0.4, 0.4).unwrap(), &w, &cfg, None).unwrap();
    let h = &res.residual_history;
    let last = *h.last().unwrap();
    let tail = &h[h.len() - h.len() / 10..];
    assert!(tail.iter().all(|r| *r <= 10.0 * last), "tail {:?} last {last}", &tail[..tail.len().min(5)]);
}

#[test]
fn warm_start_from_neighbour_saves_iterations() {
    let inst = fusemtl::synth::generate(&fusemtl::synth::SynthSpec { seed: 2, ..Default::default() }).unwrap();
    let data = &inst.train;
    let w = knn_weights(data, 4, 0.0).unwrap();
    let cfg = SolverConfig { tol: 1e-5, ..SolverConfig::default() }.with_scaled_gamma(data, &w);
    let grid = fusemtl::path::log_space(1.0, 30.0, 4);
    let (mut cold, mut warm) = (0, 0);
    let mut prev: Option<ParamMatrix> = None;
    for &l2 in &grid {
        let hp = Hyperparams::new(1.0, l2).unwrap();
        let c = fit(data, &hp, &w, &cfg, None).unwrap();
        if let Some(p) = &prev {
            cold += c.iterations;
            warm += fit_warm(data, &hp, &w, &cfg, p).unwrap().iterations;
        }
        prev = Some(c.theta);
    }
    assert!(warm < cold, "warm {warm} cold {cold}");
}

#[test]
fn identical_tasks_share_a_column() {
    let mut rng = rng(17);
    let one = random_dataset(&mut rng, 1, 5, 10);
    let t = one.task(0);
    let data = TaskDataset::new(vec![
        fusemtl::Task::new("a", t.x.clone(), t.y.clone()),
        fusemtl::Task::new("b", t.x.clone(), t.y.clone()),
    ])
    .unwrap();
    let w = uniform_weights(2);
    for l2 in [0.01, 1.0] {
        let res = fit(&data, &Hyperparams::new(0.3, l2).unwrap(), &w, &SolverConfig::default(), None).unwrap();
        assert_eq!(res.theta.column(0), res.theta.column(1));
    }
}

#[test]
fn objective_metric_is_available() {
    let mut rng = rng(18);
    let data = random_dataset(&mut rng, 3, 4, 6);
    let w = uniform_weights(3);
    let cfg = SolverConfig { tol_metric: TolMetric::ObjectiveChange, tol: 1e-12, max_iter: 50_000, ..tight(&data, &w) };
    let hp = Hyperparams::new(0.5, 0.5).unwrap();
    let a = fit(&data, &hp, &w, &cfg, None).unwrap();
    let b = fit(&data, &hp, &w, &tight(&data, &w), None).unwrap();
    assert!((a.objective - b.objective).abs() < 1e-6 * b.objective);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn relabelling_tasks_relabels_the_solution(seed in 0u64..1000, shift in 1usize..4) {
        let mut rng = rng(seed);
        let k = 4;
        let data = random_dataset(&mut rng, k, 5, 7);
        let w = WeightGraph::new(k, [Edge { s: 0, t: 1, w: 1.0 }, Edge { s: 1, t: 3, w: 0.5 }, Edge { s: 2, t: 3, w: 2.0 }, Edge { s: 0, t: 2, w: 0.3 }]).unwrap();
        let order: Vec<usize> = (0..k).map(|i| (i + shift) % k).rev().collect();
        let hp = Hyperparams::new(0.6, 0.9).unwrap();
        let cfg = SolverConfig { max_iter: 300, ..SolverConfig::default() };
        let base = fit(&data, &hp, &w, &cfg, None).unwrap();
        let perm = fit(&permute_tasks(&data, &order), &hp, &w.permuted(&order).unwrap(), &cfg, None).unwrap();
        prop_assert_eq!(perm.theta, base.theta.permute_columns(&order));
        prop_assert_eq!(perm.iterations, base.iterations);
    }

    #[test]
    fn reported_objective_is_exact(seed in 0u64..1000) {
        let mut rng = rng(seed);
        let data = random_dataset(&mut rng, 3, 4, 5);
        let w = uniform_weights(3);
        let hp = Hyperparams::new(0.5, 0.5).unwrap();
        let res = fit(&data, &hp, &w, &SolverConfig { max_iter: 200, ..SolverConfig::default() }, None).unwrap();
        let again = eval_objective(&res.theta, &data, &hp, &w).unwrap();
        prop_assert!((res.objective - again).abs() <= 1e-9 * again.abs());
    }
}

#[test]
fn lasso_objective_helper_agrees_with_eval_objective() {
    let mut rng = rng(19);
    let data = random_dataset(&mut rng, 1, 4, 6);
    let t = data.task(0);
    let beta = normal_vector(&mut rng, 4);
    let theta = ParamMatrix::from_columns(&[beta.clone()]).unwrap();
    let a = lasso_objective(&t.x, &t.y, &beta, 0.7);
    let b = eval_objective(&theta, &data, &Hyperparams::new(0.7, 0.0).unwrap(), &WeightGraph::empty(1)).unwrap();
    assert!((a - b).abs() <= 1e-12 * b);
}
