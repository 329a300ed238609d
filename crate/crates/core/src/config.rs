//! TOML run configuration.
//!
//! ```toml
//! [problem]
//! benchmark = "synthetic-opamp-v1"
//! weights = { offset_mv = 2.0 }
//!
//! [engine]
//! mode = "dnn"
//! seed = 7
//!
//! [engine.train]
//! learning_rate = 0.01
//! ```
//!
//! An external problem lists its grid and specs instead of a benchmark:
//!
//! ```toml
//! [problem.external]
//! command = ["python3", "sim.py"]
//!
//! [[problem.params]]
//! name = "w"
//! start = 1.0
//! stop = 10.0
//! step = 1.0
//!
//! [[problem.specs]]
//! name = "gain"
//! direction = "at_least"
//! threshold = 40.0
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{DesignSpace, ParamSpec, Problem, SpecDef};
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::evaluators::{Evaluator, ExternalEvaluator, ExternalEvaluatorSpec, SyntheticBenchmark};

/// A grid given either explicitly or as an inclusive range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl ParamConfig {
    fn build(&self, field: &str) -> Result<ParamSpec> {
        let spec = match (&self.values, self.start, self.stop, self.step) {
            (Some(v), None, None, None) => ParamSpec::new(&self.name, v.clone()),
            (None, Some(a), Some(b), Some(s)) => ParamSpec::range(&self.name, a, b, s),
            _ => {
                return Err(Error::config(
                    field,
                    "give either `values` or all of `start`, `stop` and `step`",
                ))
            }
        };
        spec.map_err(|e| Error::config(field, e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// Name of a built-in benchmark.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalEvaluatorSpec>,
    /// Spec weight overrides by name.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub weights: BTreeMap<String, f64>,
    /// Artificial per-evaluation delay for built-in benchmarks.
    pub latency_ms: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<ParamConfig>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub specs: Vec<SpecDef>,
}

impl ProblemConfig {
    pub fn benchmark(name: &str) -> Self {
        ProblemConfig {
            benchmark: Some(name.to_owned()),
            ..ProblemConfig::default()
        }
    }

    /// The problem definition, without starting any evaluator process.
    pub fn problem(&self) -> Result<Problem> {
        match (&self.benchmark, &self.external) {
            (Some(name), None) => Ok(self.benchmark_instance(name)?.problem()?),
            (None, Some(_)) => self.external_problem(),
            (Some(_), Some(_)) => Err(Error::config("problem", "set `benchmark` or `external`, not both")),
            (None, None) => Err(Error::config("problem", "set `benchmark` or `external`")),
        }
    }

    /// The problem and a ready evaluator for it.
    pub fn build(&self) -> Result<(Problem, Box<dyn Evaluator + Send>)> {
        let problem = self.problem()?;
        let evaluator: Box<dyn Evaluator + Send> = match (&self.benchmark, &self.external) {
            (Some(name), _) => Box::new(self.benchmark_instance(name)?),
            (_, Some(spec)) => {
                let metrics = problem.specs.iter().map(|s| s.name.clone()).collect();
                let ev = ExternalEvaluator::new(spec.clone(), metrics).map_err(|e| Error::config("problem.external", e.to_string()))?;
                Box::new(ev)
            }
            _ => unreachable!("checked by problem()"),
        };
        Ok((problem, evaluator))
    }

    fn benchmark_instance(&self, name: &str) -> Result<SyntheticBenchmark> {
        let mut b = SyntheticBenchmark::builtin(name).ok_or_else(|| {
            Error::config(
                "problem.benchmark",
                format!(
                    "unknown benchmark `{name}` (available: {})",
                    SyntheticBenchmark::builtin_names().join(", ")
                ),
            )
        })?;
        if !self.params.is_empty() || !self.specs.is_empty() {
            return Err(Error::config(
                "problem",
                "`params` and `specs` are fixed by the benchmark; use `weights` to reweight specs",
            ));
        }
        for (spec, w) in &self.weights {
            b.set_weight(spec, *w)
                .map_err(|e| Error::config(format!("problem.weights.{spec}"), e.to_string()))?;
        }
        b.latency_ms = self.latency_ms;
        Ok(b)
    }

    fn external_problem(&self) -> Result<Problem> {
        if self.params.is_empty() {
            return Err(Error::config("problem.params", "an external problem needs parameters"));
        }
        if self.specs.is_empty() {
            return Err(Error::config("problem.specs", "an external problem needs specs"));
        }
        let params = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| p.build(&format!("problem.params[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let space = DesignSpace::new(params).map_err(|e| Error::config("problem.params", e.to_string()))?;
        let mut specs = self.specs.clone();
        for (name, w) in &self.weights {
            let s = specs
                .iter_mut()
                .find(|s| &s.name == name)
                .ok_or_else(|| Error::config(format!("problem.weights.{name}"), "no such spec"))?;
            s.weight = *w;
        }
        Problem::new(space, specs).map_err(|e| Error::config("problem.specs", e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub engine: EngineConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(
                || "<file>".to_owned(),
                |s| {
                    let before = &text[..s.start.min(text.len())];
                    let line = before.matches('\n').count() + 1;
                    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                    format!("line {line}, column {col}")
                },
            );
            Error::config(field, e.message().to_owned())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<config>", e.to_string()))
    }

    /// Checks the problem and engine sections without evaluating anything.
    pub fn validate(&self) -> Result<Problem> {
        let problem = self.problem.problem()?;
        self.engine.validate()?;
        Ok(problem)
    }
}
