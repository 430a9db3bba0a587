//! Picks (lambda1, lambda2) by validation RMSE over the default grids.
//!
//! cargo run --release --example select_hyperparams -- [kappa]

use fusemtl::cv::{default_lambda1_grid, default_lambda2_grid, rmse, select_hyperparams};
use fusemtl::synth::{generate, SynthSpec};
use fusemtl::weights::knn_weights;
use fusemtl::SolverConfig;

fn main() -> fusemtl::Result<()> {
    let kappa = std::env::args().nth(1).map(|s| s.parse().expect("integer kappa")).unwrap_or(4);
    let inst = generate(&SynthSpec::default())?;
    let w = knn_weights(&inst.train, kappa, 0.0)?;
    let cfg = SolverConfig { tol: 1e-5, ..SolverConfig::default() }.with_scaled_gamma(&inst.train, &w);
    let grid1 = default_lambda1_grid(&inst.train);
    let grid2 = default_lambda2_grid(&inst.train, 20);

    let sel = select_hyperparams(&inst.train, &inst.validation, &w, &grid1, &grid2, &cfg)?;
    println!(
        "lambda1 {:.4}, lambda2 {:.4}: validation RMSE {:.4}, test RMSE {:.4} ({} iterations over {} fits)",
        sel.hyperparams.lambda1,
        sel.hyperparams.lambda2,
        sel.validation_rmse,
        rmse(&sel.theta, &inst.test)?,
        sel.iterations,
        grid1.len() * grid2.len()
    );
    Ok(())
}
