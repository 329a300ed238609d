//! Regenerates the pinned op-amp benchmark table.
//!
//! cargo run -p specgate-core --release --example pin_benchmark -- crates/core/data/synthetic-opamp-v1.json

use specgate::evaluators::{calibrate, name_seed, SyntheticBenchmark, OPAMP_V1};

const TARGET_RATE: f64 = 0.0015;
const SAMPLES: usize = 200_000;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).ok_or("usage: pin_benchmark OUT.json")?;
    let seed = name_seed(OPAMP_V1);
    let mut bench = SyntheticBenchmark::generate(
        OPAMP_V1,
        SyntheticBenchmark::opamp_space(),
        &SyntheticBenchmark::opamp_templates(),
        &SyntheticBenchmark::opamp_family(),
        seed,
    );
    let cal = calibrate(&mut bench, TARGET_RATE, SAMPLES, seed)?;
    eprintln!("quantile {:.4}, joint rate {:.5}", cal.marginal_quantile, cal.achieved_rate);
    std::fs::write(out, serde_json::to_string_pretty(&bench)? + "\n")?;
    Ok(())
}
