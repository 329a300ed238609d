use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticBenchmark;
use crate::domain::{DesignPoint, DesignSpace, Direction};
use crate::error::{Error, Result};

/// Record of how a benchmark's thresholds were chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target_rate: f64,
    pub samples: usize,
    pub seed: u64,
    /// Marginal fraction of samples satisfying each spec on its own.
    pub marginal_quantile: f64,
    /// Fraction of the calibration samples satisfying every spec.
    pub achieved_rate: f64,
}

pub(crate) fn uniform_point<R: Rng + ?Sized>(space: &DesignSpace, rng: &mut R) -> DesignPoint {
    DesignPoint::new(space.params().iter().map(|p| rng.random_range(0..p.len())).collect())
}

struct Sorted {
    direction: Direction,
    /// Ascending for at-most metrics, descending for at-least metrics, so
    /// the first entries are always the best.
    values: Vec<f64>,
}

impl Sorted {
    fn threshold(&self, q: f64) -> f64 {
        let n = self.values.len();
        let r = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.values[r]
    }
}

fn joint_rate(samples: &[Vec<f64>], sorted: &[Sorted], thresholds: &[f64]) -> f64 {
    let hits = samples
        .iter()
        .filter(|s| {
            s.iter()
                .zip(sorted)
                .zip(thresholds)
                .all(|((v, m), t)| m.direction.satisfied(*v, *t))
        })
        .count();
    hits as f64 / samples.len() as f64
}

/// Picks one common marginal quantile for all metrics so that the joint
/// satisfaction rate over `samples` is as close as possible to `target`.
/// Returns the thresholds, the quantile and the achieved joint rate.
pub fn calibrate_samples(samples: &[Vec<f64>], directions: &[Direction], target: f64) -> Result<(Vec<f64>, f64, f64)> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Calibration(format!("target rate {target} is outside (0, 1)")));
    }
    if samples.is_empty() {
        return Err(Error::Calibration("no samples".into()));
    }
    let mut sorted = Vec::with_capacity(directions.len());
    for (m, &direction) in directions.iter().enumerate() {
        let mut values: Vec<f64> = samples.iter().map(|s| s[m]).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Calibration(format!("metric {m} produced a non-finite value")));
        }
        values.sort_by(f64::total_cmp);
        if values[0] == values[values.len() - 1] {
            return Err(Error::Calibration(format!(
                "metric {m} is constant ({}) over every sample",
                values[0]
            )));
        }
        if direction == Direction::AtLeast {
            values.reverse();
        }
        sorted.push(Sorted { direction, values });
    }

    let eval = |q: f64| {
        let t: Vec<f64> = sorted.iter().map(|s| s.threshold(q)).collect();
        let r = joint_rate(samples, &sorted, &t);
        (t, r)
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let score = |r: f64| if r > 0.0 { (r / target).ln().abs() } else { f64::INFINITY };
    for _ in 0..60 {
        let q = 0.5 * (lo + hi);
        let (t, r) = eval(q);
        if best.as_ref().map_or(true, |b| score(r) < score(b.2)) {
            best = Some((t, q, r));
        }
        if r < target {
            lo = q;
        } else {
            hi = q;
        }
    }
    let (t, q, r) = best.expect("bisection ran");
    if !(r >= 0.5 * target && r <= 2.0 * target) {
        return Err(Error::Calibration(format!(
            "target rate {target} unreachable: closest joint rate {r} at marginal quantile {q} over {} samples",
            samples.len()
        )));
    }
    Ok((t, q, r))
}

/// Sets the benchmark's thresholds from `budget` uniform samples drawn with `seed`.
pub fn calibrate(bench: &mut SyntheticBenchmark, target: f64, budget: usize, seed: u64) -> Result<Calibration> {
    if budget < 10_000 {
        return Err(Error::Calibration(format!("sample budget {budget} is below 10000")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Vec<f64>> = (0..budget)
        .map(|_| {
            let p = uniform_point(&bench.space, &mut rng);
            bench.measure_point(&p)
        })
        .collect::<Result<_>>()?;
    let directions: Vec<Direction> = bench.metrics.iter().map(|m| m.direction).collect();
    let (thresholds, quantile, achieved) = calibrate_samples(&samples, &directions, target)?;
    for (spec, t) in bench.specs.iter_mut().zip(thresholds) {
        spec.threshold = t;
    }
    let record = Calibration {
        target_rate: target,
        samples: budget,
        seed,
        marginal_quantile: quantile,
        achieved_rate: achieved,
    };
    bench.calibration = Some(record.clone());
    Ok(record)
}
