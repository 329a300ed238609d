//! Runs every mode on the built-in benchmark over a few seeds and prints
//! simulations and iterations to the first zero-cost design.
//!
//! cargo run -p specgate-core --release --example modes -- [SEEDS] [MAX_ITERATIONS]

use std::time::Instant;

use specgate::engine::{self, EngineConfig, Mode};
use specgate::evaluators::SyntheticBenchmark;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(Ok(5), |s| s.parse())?;
    let max_iterations: usize = args.next().map_or(Ok(300), |s| s.parse())?;
    let start = Instant::now();
    let jobs: Vec<(Mode, u64)> = [Mode::Dnn, Mode::Oracle, Mode::Vanilla]
        .into_iter()
        .flat_map(|m| (0..seeds).map(move |s| (m, s)))
        .collect();
    let results = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(mode, seed)| {
                scope.spawn(move || {
                    let mut bench = SyntheticBenchmark::opamp_v1();
                    let problem = bench.problem().expect("benchmark problem");
                    let cfg = EngineConfig {
                        mode,
                        seed,
                        max_iterations,
                        ..EngineConfig::default()
                    };
                    let t = Instant::now();
                    let r = engine::run(cfg, problem, &mut bench);
                    (mode, seed, r, t.elapsed())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread")).collect::<Vec<_>>()
    });
    for (mode, seed, r, t) in results {
        let r = r?;
        println!(
            "{mode:8} seed {seed}: {:?} iters {:?} sims {:?} queries {} fallbacks {} best {:.4} ({:.1}s)",
            r.status,
            r.iterations_to_solve(),
            r.simulations_to_solve(),
            r.counters.nn_queries,
            r.counters.fallbacks,
            r.best.cost,
            t.as_secs_f64()
        );
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
