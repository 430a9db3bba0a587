//! Builds k-NN fusion weights from task responses and inspects them.
//!
//! cargo run --example weight_graphs -- [kappa] [phi]

use fusemtl::synth::{generate, SynthSpec};
use fusemtl::weights::{knn_weights, uniform_weights};

fn main() -> fusemtl::Result<()> {
    let mut args = std::env::args().skip(1);
    let kappa = args.next().map(|s| s.parse().expect("integer kappa")).unwrap_or(4);
    let phi = args.next().map(|s| s.parse().expect("numeric phi")).unwrap_or(0.05);
    let inst = generate(&SynthSpec::default())?;
    let group_of = |s: usize| inst.true_groups.iter().position(|g| g.contains(&s)).unwrap();

    let w = knn_weights(&inst.train, kappa, phi)?;
    let within = w.edges().iter().filter(|e| group_of(e.s) == group_of(e.t)).count();
    println!("{} edges, {within} within a true group, connected: {}", w.len(), w.is_connected());
    for e in w.edges() {
        println!("  {:>2} - {:<2} w {:.4}", e.s, e.t, e.w);
    }
    println!("complete graph on {} tasks has {} edges", inst.train.k(), uniform_weights(inst.train.k()).len());
    Ok(())
}
