use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::calibrate::Calibration;
use super::{EvalError, Evaluator};
use crate::domain::{DesignPoint, DesignSpace, Direction, Measurement, ParamSpec, Problem, SpecDef};
use crate::error::{Error, Result};

pub const OPAMP_V1: &str = "synthetic-opamp-v1";

const OPAMP_V1_JSON: &str = include_str!("../../data/synthetic-opamp-v1.json");

/// `coef * Π exp(e_j)^exponent_j` over the encoded parameters `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    pub exponents: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDef {
    pub name: String,
    pub direction: Direction,
    pub terms: Vec<Term>,
}

impl MetricDef {
    pub fn eval(&self, encoded: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let log: f64 = t.exponents.iter().zip(encoded).map(|(a, e)| a * e).sum();
                t.coef * log.exp()
            })
            .sum()
    }
}

/// Shape of a generated metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Family {
    /// Terms per metric; the first has the metric's scale as coefficient.
    pub terms: usize,
    /// Magnitude of the other terms' coefficients relative to the scale.
    pub side_ratio: f64,
    /// Probability that a parameter appears in a term.
    pub density: f64,
    /// Exponents are uniform in `(-spread, spread)`.
    pub spread: f64,
}

impl Default for Family {
    fn default() -> Self {
        Family {
            terms: 2,
            side_ratio: 0.35,
            density: 0.6,
            spread: 1.2,
        }
    }
}

/// Name, direction and nominal magnitude of a generated metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTemplate {
    pub name: &'static str,
    pub direction: Direction,
    pub scale: f64,
}

/// Closed-form stand-in for a circuit simulator: every metric is a short
/// sum of signed monomials in the (exponentiated) encoded parameters, so
/// parameters trade metrics off against each other smoothly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBenchmark {
    pub name: String,
    pub family_seed: u64,
    pub family: Family,
    pub space: DesignSpace,
    pub metrics: Vec<MetricDef>,
    pub specs: Vec<SpecDef>,
    #[serde(default)]
    pub calibration: Option<Calibration>,
    /// Artificial delay per evaluation, for demos.
    #[serde(default)]
    pub latency_ms: u64,
}

/// Seed derived from a benchmark name.
pub fn name_seed(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl SyntheticBenchmark {
    /// The shipped, pinned and calibrated op-amp-like benchmark.
    pub fn opamp_v1() -> Self {
        serde_json::from_str(OPAMP_V1_JSON).expect("pinned benchmark parses")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            OPAMP_V1 => Some(Self::opamp_v1()),
            _ => None,
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &[OPAMP_V1]
    }

    /// Design space of the op-amp benchmark: six finger counts in 1..=100 and
    /// a compensation capacitor from 0.1 to 10.0 in 0.1 steps.
    pub fn opamp_space() -> DesignSpace {
        let mut params: Vec<ParamSpec> = (1..=6)
            .map(|i| ParamSpec::range(format!("nf{i}"), 1.0, 100.0, 1.0).expect("valid range"))
            .collect();
        params.push(ParamSpec::range("cc_pf", 0.1, 10.0, 0.1).expect("valid range"));
        DesignSpace::new(params).expect("valid space")
    }

    /// Generator settings of the shipped op-amp table.
    pub fn opamp_family() -> Family {
        Family::default()
    }

    pub fn opamp_templates() -> Vec<MetricTemplate> {
        use Direction::*;
        vec![
            MetricTemplate { name: "gain", direction: AtLeast, scale: 300.0 },
            MetricTemplate { name: "funity_mhz", direction: AtLeast, scale: 10.0 },
            MetricTemplate { name: "phase_margin_deg", direction: AtLeast, scale: 60.0 },
            MetricTemplate { name: "tsettle_ns", direction: AtMost, scale: 90.0 },
            MetricTemplate { name: "cmrr_db", direction: AtLeast, scale: 50.0 },
            MetricTemplate { name: "psrr_db", direction: AtLeast, scale: 50.0 },
            MetricTemplate { name: "offset_mv", direction: AtMost, scale: 1.0 },
            MetricTemplate { name: "ibias_ua", direction: AtMost, scale: 200.0 },
        ]
    }

    /// Draws a coefficient/exponent table from `seed`. Thresholds start at
    /// each metric's nominal scale; run [`calibrate`](super::calibrate) to
    /// set them properly.
    pub fn generate(name: &str, space: DesignSpace, templates: &[MetricTemplate], family: &Family, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = space.dim();
        let exps = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..dim)
                .map(|_| {
                    if rng.random::<f64>() < family.density {
                        rng.random_range(-family.spread..family.spread)
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let metrics = templates
            .iter()
            .map(|t| {
                let mut terms = vec![Term {
                    coef: t.scale,
                    exponents: exps(&mut rng),
                }];
                for _ in 1..family.terms {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    terms.push(Term {
                        coef: sign * family.side_ratio * t.scale,
                        exponents: exps(&mut rng),
                    });
                }
                MetricDef {
                    name: t.name.to_owned(),
                    direction: t.direction,
                    terms,
                }
            })
            .collect();
        let specs = templates
            .iter()
            .map(|t| SpecDef::new(t.name, t.direction, t.scale))
            .collect();
        SyntheticBenchmark {
            name: name.to_owned(),
            family_seed: seed,
            family: family.clone(),
            space,
            metrics,
            specs,
            calibration: None,
            latency_ms: 0,
        }
    }

    /// Metric values in metric order.
    pub fn measure_point(&self, point: &DesignPoint) -> Result<Vec<f64>> {
        let e = self.space.encode(point)?;
        Ok(self.metrics.iter().map(|m| m.eval(&e)).collect())
    }

    pub fn measure(&self, point: &DesignPoint) -> Result<Measurement> {
        let values = self.measure_point(point)?;
        Ok(Measurement {
            values: self
                .metrics
                .iter()
                .zip(values)
                .map(|(m, v)| (m.name.clone(), v))
                .collect(),
        })
    }

    pub fn problem(&self) -> Result<Problem> {
        Problem::new(self.space.clone(), self.specs.clone())
    }

    pub fn set_weight(&mut self, spec: &str, weight: f64) -> Result<()> {
        let s = self
            .specs
            .iter_mut()
            .find(|s| s.name == spec)
            .ok_or_else(|| Error::contract(format!("benchmark `{}` has no spec `{spec}`", self.name)))?;
        s.weight = weight;
        s.validate()
    }
}

impl Evaluator for SyntheticBenchmark {
    fn evaluate(&mut self, point: &DesignPoint, space: &DesignSpace) -> Result<Measurement, EvalError> {
        if space != &self.space {
            return Err(EvalError::Invalid(format!(
                "design space does not match benchmark `{}`",
                self.name
            )));
        }
        if self.latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.latency_ms));
        }
        self.measure(point).map_err(|e| EvalError::Invalid(e.to_string()))
    }

    fn describe(&self) -> String {
        format!("synthetic benchmark `{}`", self.name)
    }
}
