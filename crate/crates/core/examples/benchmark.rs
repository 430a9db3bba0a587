//! Repeated train/validation/test comparison of all methods.
//!
//! cargo run --release --example benchmark -- [repeats]

use fusemtl::cv::{benchmark, BenchConfig};
use fusemtl::synth::SynthSpec;

fn main() -> fusemtl::Result<()> {
    let repeats = std::env::args().nth(1).map(|s| s.parse().expect("integer repeat count")).unwrap_or(2);
    let cfg = BenchConfig { repeats, lambda2_points: 20, ..BenchConfig::default() };
    let report = benchmark(&SynthSpec::default(), &cfg)?;
    print!("{}", report.to_table());
    Ok(())
}
