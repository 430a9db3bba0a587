//! Runs the comparison methods at one lambda1 and reports test RMSE.
//!
//! cargo run --release --example baselines -- [lambda1]

use fusemtl::baselines::{
    nogroup_mtl_baseline, pooled_lasso, post_cluster_single_task, pregroup_mtl_baseline, response_correlation_groups,
    single_task_baseline, LassoOptions,
};
use fusemtl::cv::rmse;
use fusemtl::synth::{generate, SynthSpec};
use fusemtl::weights::WeightGraph;
use fusemtl::{ParamMatrix, SolverConfig};

fn main() -> fusemtl::Result<()> {
    let lambda1 = std::env::args().nth(1).map(|s| s.parse().expect("numeric lambda1")).unwrap_or(1.0);
    let inst = generate(&SynthSpec::default())?;
    let (train, test) = (&inst.train, &inst.test);
    let cfg = SolverConfig::default().with_scaled_gamma(train, &WeightGraph::empty(train.k()));

    let single = single_task_baseline(train, lambda1)?;
    println!("single_task  {:.4}", rmse(&single, test)?);
    println!("nogroup      {:.4}", rmse(&nogroup_mtl_baseline(train, lambda1, &cfg)?, test)?);
    println!("pregroup     {:.4}", rmse(&pregroup_mtl_baseline(train, 3, lambda1, &cfg)?, test)?);
    let pooled = pooled_lasso(train, lambda1, LassoOptions::default())?;
    let shared = ParamMatrix::from_columns(&vec![pooled.beta; train.k()])?;
    println!("pooled       {:.4}", rmse(&shared, test)?);

    println!("correlation groups {:?}", response_correlation_groups(train, 3)?);
    let tree = post_cluster_single_task(&single);
    println!("post-hoc clustering of single-task fits: {}", tree.to_newick_linear());
    Ok(())
}
