//! Traces the fusion path over lambda2 and turns it into a task tree.
//!
//! cargo run --release --example task_tree -- [seed]

use fusemtl::path::{compute_path, cut_tree, extract_tree, log_space, PathSpec};
use fusemtl::synth::{generate, SynthSpec};
use fusemtl::weights::knn_weights;
use fusemtl::SolverConfig;

fn main() -> fusemtl::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse().expect("seed must be an integer")).unwrap_or(0);
    let inst = generate(&SynthSpec { seed, ..SynthSpec::default() })?;
    let data = &inst.train;
    let w = knn_weights(data, 4, 0.05)?;

    let mut spec = PathSpec::new(log_space(0.1, 1e4, 60), fusemtl::cv::lambda_scale(data));
    spec.escalate = true;
    let cfg = SolverConfig::default().with_scaled_gamma(data, &w);
    let path = compute_path(data, &w, &spec, &cfg)?;
    let iterations: usize = path.iter().map(|p| p.fit.iterations).sum();
    println!("{} path points, {iterations} solver iterations in total", path.len());

    let tree = extract_tree(&path, spec.merge_tol, data.ids())?;
    for m in &tree.merges {
        println!("lambda2 {:>10.4}: {} + {} -> {}", m.height, m.left, m.right, m.new_cluster);
    }
    if tree.is_complete() {
        println!("{}", tree.to_newick(path[0].lambda2));
    }
    match cut_tree(&tree, 3) {
        Ok(groups) => println!("three-cluster cut {groups:?}, truth {:?}", inst.true_groups),
        Err(e) => println!("no three-cluster cut: {e}"),
    }
    Ok(())
}
