//! Fits the fused model at one (lambda1, lambda2) on synthetic data and
//! compares it against per-task lasso.
//!
//! cargo run --release --example fit_model -- [lambda1] [lambda2]

use fusemtl::baselines::single_task_baseline;
use fusemtl::cv::rmse;
use fusemtl::synth::{generate, SynthSpec};
use fusemtl::weights::knn_weights;
use fusemtl::{fit, Hyperparams, SolverConfig};

fn main() -> fusemtl::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<f64>().expect("numeric argument"));
    let lambda1 = args.next().unwrap_or(1.0);
    let lambda2 = args.next().unwrap_or(5.0);

    let inst = generate(&SynthSpec::default())?;
    let w = knn_weights(&inst.train, 4, 0.0)?;
    let cfg = SolverConfig { max_iter: 50_000, ..SolverConfig::default() }.with_scaled_gamma(&inst.train, &w);
    let res = fit(&inst.train, &Hyperparams::new(lambda1, lambda2)?, &w, &cfg, None)?;

    println!(
        "objective {:.6} after {} iterations (converged: {}, gamma {:.3e})",
        res.objective, res.iterations, res.converged, cfg.gamma
    );
    println!("fused model test RMSE  {:.4}", rmse(&res.theta, &inst.test)?);
    let single = single_task_baseline(&inst.train, lambda1)?;
    println!("single-task test RMSE  {:.4}", rmse(&single, &inst.test)?);
    println!("oracle test RMSE       {:.4}", rmse(&inst.true_theta, &inst.test)?);
    Ok(())
}
