mod common;

use common::*;
use fusemtl::baselines::{
    average_linkage, kkt_violation, lasso_cd, nogroup_mtl_baseline, post_cluster_single_task, pregroup_mtl_baseline,
    response_correlation_groups, single_task_baseline_with, LassoOptions,
};
use fusemtl::cv::{rmse, select_hyperparams, select_single_task, Method, BenchConfig, benchmark};
use fusemtl::path::{cluster_count, compute_path, cut_tree, extract_tree, log_space, PathFile};
use fusemtl::synth::{generate, SynthSpec};
use fusemtl::weights::{uniform_weights, WeightGraph};
use fusemtl::{eval_objective, fit, Hyperparams, ParamMatrix, PathSpec, SolverConfig, SparsityMode, Task, TaskDataset};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn small_suite(seed: u64) -> fusemtl::synth::SynthInstance {
    generate(&SynthSpec { n: 15, p: 12, groups: 2, tasks_per_group: 3, support_size: 3, coef_mode: fusemtl::synth::CoefMode::Equal { value: 2.0 }, seed, ..Default::default() }).unwrap()
}

#[test]
fn path_over_zero_is_a_lasso_fit() {
    let mut rng = rng(40);
    let data = random_dataset(&mut rng, 3, 4, 8);
    let w = uniform_weights(3);
    let cfg = SolverConfig { tol: 1e-11, max_iter: 100_000, ..SolverConfig::default() }.with_scaled_gamma(&data, &w);
    let path = compute_path(&data, &w, &PathSpec::new(vec![0.0], 0.9), &cfg).unwrap();
    assert_eq!(path.len(), 1);
    let base = single_task_baseline_with(&data, 0.9, LassoOptions { tol: 1e-10, max_iter: 100_000 }).unwrap();
    let hp = Hyperparams::new(0.9, 0.0).unwrap();
    assert!((path[0].fit.objective - eval_objective(&base, &data, &hp, &w).unwrap()).abs() < 1e-6);
}

#[test]
fn identical_tasks_stay_fused_along_the_path() {
    let mut rng = rng(41);
    let x = normal_matrix(&mut rng, 10, 4);
    let y = normal_vector(&mut rng, 10);
    let other = normal_vector(&mut rng, 10);
    let data = TaskDataset::new(vec![
        Task::new("a", x.clone(), y.clone()),
        Task::new("b", x.clone(), y),
        Task::new("c", x, other),
    ])
    .unwrap();
    let w = uniform_weights(3);
    let path = compute_path(&data, &w, &PathSpec::new(log_space(0.01, 10.0, 6), 0.2), &SolverConfig::default()).unwrap();
    for pt in &path {
        assert_eq!(pt.fit.theta.column(0), pt.fit.theta.column(1));
    }
}

#[test]
fn escalation_reaches_full_merge_and_tree_is_complete() {
    let inst = small_suite(3);
    let data = &inst.train;
    let w = uniform_weights(data.k());
    let cfg = SolverConfig { tol: 1e-7, ..SolverConfig::default() }.with_scaled_gamma(data, &w);
    let spec = PathSpec { escalate: true, ..PathSpec::new(log_space(0.1, 10.0, 8), 1.0) };
    let path = compute_path(data, &w, &spec, &cfg).unwrap();
    assert_eq!(cluster_count(&path.last().unwrap().fit.theta, 1e-4), 1);
    let tree = extract_tree(&path, 1e-4, data.ids()).unwrap();
    assert!(tree.is_complete());
    assert_eq!(tree.merges.len(), data.k() - 1);
    // the file form yields the same tree, with or without parameters
    for light in [false, true] {
        let file = PathFile::new(&path, data.ids(), 1.0, light).unwrap();
        let json = serde_json::to_string(&file).unwrap();
        let back: PathFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.tree(1e-4).unwrap(), tree);
        assert_eq!(back.theta(0).is_some(), !light);
    }
    let mut counts: Vec<usize> = path.iter().map(|p| cluster_count(&p.fit.theta, 1e-4)).collect();
    // monotone closure can only lower counts, so the raw counts bound the tree's
    let closed: Vec<usize> = path
        .iter()
        .map(|p| data.k() - tree.merges.iter().filter(|m| m.height <= p.lambda2).count())
        .collect();
    for (raw, c) in counts.iter_mut().zip(&closed) {
        assert!(c <= raw);
    }
    assert!(closed.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn fully_fused_path_matches_pooled_lasso() {
    let inst = small_suite(4);
    let data = &inst.train;
    let w = uniform_weights(data.k());
    let cfg = SolverConfig { tol: 1e-10, max_iter: 200_000, ..SolverConfig::default() }.with_scaled_gamma(data, &w);
    let path = compute_path(data, &w, &PathSpec::new(log_space(1.0, 1e4, 5), 2.0), &cfg).unwrap();
    let last = &path.last().unwrap().fit.theta;
    assert_eq!(cluster_count(last, 1e-4), 1);
    let pooled = fusemtl::baselines::pooled_lasso(data, 2.0, LassoOptions { tol: 1e-10, max_iter: 100_000 }).unwrap();
    let ours = pooled_objective(data, &last.column_mean(), 2.0);
    assert!((ours - pooled.objective).abs() < 1e-6 * pooled.objective, "{ours} vs {}", pooled.objective);
}

#[test]
fn lasso_unpenalized_square_system_is_ols() {
    let mut rng = rng(42);
    let x = normal_matrix(&mut rng, 5, 5);
    let y = normal_vector(&mut rng, 5);
    let fit = lasso_cd(&x, &y, 0.0, 1e-10, 1_000_000).unwrap();
    let beta = x.clone().lu().solve(&y).unwrap();
    assert!((fit.beta - beta).amax() < 1e-6);
}

#[test]
fn average_linkage_three_point_example() {
    let d = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 2.0], vec![1.0, 2.0, 0.0]];
    let tree = average_linkage(&d, vec!["a".into(), "b".into(), "c".into()]).unwrap();
    assert_eq!(tree.merges[0].height, 1.0);
    assert_eq!((tree.merges[0].left, tree.merges[0].right), (0, 1));
    assert_eq!(tree.merges[1].height, 1.5);
    // hand check of the average: d({a,b}, c) = (1 + 2) / 2
    let ident = ParamMatrix::from_matrix(DMatrix::from_element(3, 4, 0.25)).unwrap();
    assert!(post_cluster_single_task(&ident).merges.iter().all(|m| m.height == 0.0));
}

#[test]
fn nogroup_rows_share_support_and_beat_subgradient_oracle() {
    let mut rng = rng(43);
    let data = random_dataset(&mut rng, 3, 5, 7);
    let cfg = SolverConfig { tol: 1e-11, max_iter: 100_000, ..SolverConfig::default() }.with_scaled_gamma(&data, &WeightGraph::empty(3));
    let theta = nogroup_mtl_baseline(&data, 4.0, &cfg).unwrap();
    for j in 0..5 {
        let row = theta.row(j);
        assert!(row.iter().all(|v| v.abs() > 1e-8) || row.iter().all(|v| v.abs() < 1e-10), "row {j}: {row}");
    }
    let hp = Hyperparams::with_mode(4.0, 0.0, SparsityMode::RowGroupL21).unwrap();
    let ours = eval_objective(&theta, &data, &hp, &WeightGraph::empty(3)).unwrap();
    let (oracle, _) = subgradient_oracle(&data, &hp, &WeightGraph::empty(3), 200_000);
    assert!(ours <= oracle + 1e-4, "{ours} vs {oracle}");
}

#[test]
fn pregroup_extremes() {
    let inst = small_suite(5);
    let data = &inst.train;
    let cfg = SolverConfig { tol: 1e-10, max_iter: 100_000, ..SolverConfig::default() }.with_scaled_gamma(data, &WeightGraph::empty(data.k()));
    let all = pregroup_mtl_baseline(data, 1, 1.5, &cfg).unwrap();
    let nogroup = nogroup_mtl_baseline(data, 1.5, &cfg).unwrap();
    assert!((all.as_matrix() - nogroup.as_matrix()).amax() < 1e-6);
    let single = pregroup_mtl_baseline(data, data.k(), 1.5, &cfg).unwrap();
    let lasso = single_task_baseline_with(data, 1.5, LassoOptions { tol: 1e-10, max_iter: 100_000 }).unwrap();
    assert!((single.as_matrix() - lasso.as_matrix()).amax() < 1e-5);
    let mut groups = response_correlation_groups(data, 2).unwrap();
    groups.sort();
    assert_eq!(groups, inst.true_groups);
}

#[test]
fn rmse_noise_floor_and_zero() {
    let inst = generate(&SynthSpec { seed: 8, ..Default::default() }).unwrap();
    let floor = rmse(&inst.true_theta, &inst.test).unwrap();
    assert!((floor - 1.0).abs() < 0.15, "{floor}");
    let noiseless = generate(&SynthSpec { seed: 8, noise_sd: 0.0, ..Default::default() }).unwrap();
    assert!(rmse(&noiseless.true_theta, &noiseless.test).unwrap() < 1e-12);
    let zero = ParamMatrix::zeros(50, 15);
    let ms: f64 = inst.test.tasks().iter().map(|t| t.y.norm_squared()).sum::<f64>() / inst.test.total_rows() as f64;
    assert!((rmse(&zero, &inst.test).unwrap() - ms.sqrt()).abs() < 1e-12);
}

#[test]
fn selection_on_single_points_and_zero_fusion() {
    let inst = small_suite(6);
    let (train, val) = (&inst.train, &inst.validation);
    let w = uniform_weights(train.k());
    let cfg = SolverConfig { tol: 1e-10, max_iter: 100_000, ..SolverConfig::default() }.with_scaled_gamma(train, &w);
    let one = select_hyperparams(train, val, &w, &[0.7], &[2.0], &cfg).unwrap();
    assert_eq!((one.hyperparams.lambda1, one.hyperparams.lambda2), (0.7, 2.0));
    let grid1 = [0.1, 1.0, 5.0];
    let zero = select_hyperparams(train, val, &w, &grid1, &[0.0], &cfg).unwrap();
    let lasso = select_single_task(train, val, &grid1).unwrap();
    assert_eq!(zero.hyperparams.lambda1, lasso.hyperparams.lambda1);
    assert!((zero.validation_rmse - lasso.validation_rmse).abs() < 1e-6);
    let again = select_hyperparams(train, val, &w, &grid1, &[0.0], &cfg).unwrap();
    assert_eq!(again, zero);
}

#[test]
fn one_repeat_one_method_bench() {
    let spec = SynthSpec { n: 10, p: 8, groups: 2, tasks_per_group: 2, support_size: 2, ..Default::default() };
    let cfg = BenchConfig { repeats: 1, methods: vec![Method::SingleTask], ..BenchConfig::default() };
    let report = benchmark(&spec, &cfg).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].method, Method::SingleTask);
    assert_eq!(report.to_csv().lines().count(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cuts_are_partitions(seed in 0u64..1000, g in 1usize..7) {
        let mut rng = rng(seed);
        let k = 6;
        let pts = normal_matrix(&mut rng, 3, k);
        let dist: Vec<Vec<f64>> = (0..k).map(|s| (0..k).map(|t| (pts.column(s) - pts.column(t)).norm()).collect()).collect();
        let tree = average_linkage(&dist, (0..k).map(|s| s.to_string()).collect()).unwrap();
        tree.validate().unwrap();
        let cut = cut_tree(&tree, g).unwrap();
        prop_assert_eq!(cut.len(), g);
        let mut all: Vec<usize> = cut.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn lasso_satisfies_kkt(seed in 0u64..1000, lambda1 in 0.01f64..5.0) {
        let mut rng = rng(seed);
        let x = normal_matrix(&mut rng, 8, 5);
        let y = normal_vector(&mut rng, 8);
        let fit = lasso_cd(&x, &y, lambda1, 1e-8, 100_000).unwrap();
        prop_assert!(kkt_violation(&x, &y, &fit.beta, lambda1) <= 1e-6);
    }

    #[test]
    fn single_task_equals_zero_fusion_solver(seed in 0u64..1000) {
        let mut rng = rng(seed);
        let data = random_dataset(&mut rng, 3, 4, 6);
        let w = uniform_weights(3);
        let hp = Hyperparams::new(0.5, 0.0).unwrap();
        let cfg = SolverConfig { tol: 1e-10, max_iter: 100_000, ..SolverConfig::default() }.with_scaled_gamma(&data, &w);
        let solver = fit(&data, &hp, &w, &cfg, None).unwrap();
        let base = single_task_baseline_with(&data, 0.5, LassoOptions { tol: 1e-10, max_iter: 100_000 }).unwrap();
        let base_obj = eval_objective(&base, &data, &hp, &w).unwrap();
        prop_assert!((solver.objective - base_obj).abs() < 1e-4);
    }

    #[test]
    fn rmse_ignores_task_and_row_order(seed in 0u64..1000) {
        let mut rng = rng(seed);
        let data = random_dataset(&mut rng, 4, 3, 5);
        let theta = ParamMatrix::from_matrix(normal_matrix(&mut rng, 3, 4)).unwrap();
        let base = rmse(&theta, &data).unwrap();
        let order = [2, 0, 3, 1];
        let shuffled = TaskDataset::new(
            order
                .iter()
                .map(|&s| {
                    let t = data.task(s);
                    let rows: Vec<usize> = (0..t.n()).rev().collect();
                    Task::new(t.id.clone(), t.x.select_rows(&rows), DVector::from_iterator(t.n(), rows.iter().map(|&i| t.y[i])))
                })
                .collect(),
        )
        .unwrap();
        let other = rmse(&theta.permute_columns(&order), &shuffled).unwrap();
        prop_assert!((base - other).abs() <= 1e-12 * base);
    }
}
