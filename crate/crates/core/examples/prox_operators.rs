//! The three proximal maps the solver is built from, on tiny inputs.

use fusemtl::prox::{prox_fusion_pair, prox_loss, prox_sparsity, LossProxCache};
use fusemtl::{ParamMatrix, SparsityMode, Task, TaskDataset};
use nalgebra::{DMatrix, DVector};

fn main() -> fusemtl::Result<()> {
    let b = ParamMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, -1.0, 0.8]))?;

    let l1 = prox_sparsity(&b, 0.5, 1.0, SparsityMode::ElementwiseL1);
    println!("soft threshold at 0.5:\n{}", l1.as_matrix());
    let rows = prox_sparsity(&b, 0.5, 2.0, SparsityMode::RowGroupL21);
    println!("row-group shrinkage at 1.0:\n{}", rows.as_matrix());

    for tau in [0.25, 2.0] {
        let fused = prox_fusion_pair(&b, 0, 1, 1.0, tau, 1.0)?;
        println!("fusion pair, tau {tau}:\n{}", fused.as_matrix());
    }

    let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let data = TaskDataset::new(vec![
        Task::new("a", x.clone(), DVector::from_column_slice(&[1.0, 2.0, 3.0])),
        Task::new("b", x, DVector::from_column_slice(&[0.0, 1.0, 1.0])),
    ])?;
    let cache = LossProxCache::new(&data, 0.5)?;
    println!("loss prox (sigma 0.5) from zero:\n{}", prox_loss(&ParamMatrix::zeros(2, 2), &cache)?.as_matrix());
    Ok(())
}
