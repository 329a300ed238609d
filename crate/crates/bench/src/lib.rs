//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use specgate::comparator::{make_pairs, PairExample};
use specgate::engine::init_population;
use specgate::evaluators::SyntheticBenchmark;
use specgate::{Buffer, Problem};

/// The pinned benchmark with an initial population of `n` designs.
pub fn population(n: usize, seed: u64) -> (Problem, Buffer, SyntheticBenchmark) {
    let mut bench = SyntheticBenchmark::opamp_v1();
    let problem = bench.problem().expect("pinned benchmark is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buffer = init_population(&problem, &mut bench, n, &mut rng).expect("synthetic evaluation cannot fail");
    (problem, buffer, bench)
}

pub fn pairs(problem: &Problem, buffer: &Buffer) -> Vec<PairExample> {
    make_pairs(buffer, &problem.space, &problem.specs).expect("pairs from a valid buffer")
}
