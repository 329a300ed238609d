//! Vocabulary types: parameter grids, design points, specifications,
//! measurements and the population buffer.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost;
use crate::error::{Error, Result};

/// One tunable parameter with its discrete, strictly increasing grid of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub grid: Vec<f64>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, grid: Vec<f64>) -> Result<Self> {
        let spec = ParamSpec {
            name: name.into(),
            grid,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid `start, start + step, ...` up to and including `stop` (within half a step).
    pub fn range(name: impl Into<String>, start: f64, stop: f64, step: f64) -> Result<Self> {
        let name = name.into();
        if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
            return Err(Error::contract(format!(
                "parameter `{name}`: invalid range {start}..={stop} step {step}"
            )));
        }
        let count = ((stop - start) / step + 0.5).floor() as usize + 1;
        // Multiply rather than accumulate so 0.1 steps don't drift.
        let grid = (0..count).map(|i| start + step * i as f64).collect();
        ParamSpec::new(name, grid)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::contract(format!(
                "parameter `{}` has an empty grid",
                self.name
            )));
        }
        if self.grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "parameter `{}` has a non-finite grid value",
                self.name
            )));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract(format!(
                "parameter `{}` grid is not strictly increasing",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    params: Vec<ParamSpec>,
}

impl DesignSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &params {
            p.validate()?;
            if !seen.insert(p.name.as_str()) {
                return Err(Error::contract(format!(
                    "duplicate parameter name `{}`",
                    p.name
                )));
            }
        }
        if params.is_empty() {
            return Err(Error::contract("design space has no parameters"));
        }
        Ok(DesignSpace { params })
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    /// Number of grid cells, as a float since real spaces overflow `u64`.
    pub fn cardinality(&self) -> f64 {
        self.params.iter().map(|p| p.len() as f64).product()
    }

    pub fn check(&self, point: &DesignPoint) -> Result<()> {
        if point.indices.len() != self.dim() {
            return Err(Error::contract(format!(
                "design point has {} indices, space has {} parameters",
                point.indices.len(),
                self.dim()
            )));
        }
        for (p, &i) in self.params.iter().zip(&point.indices) {
            if i >= p.len() {
                return Err(Error::contract(format!(
                    "index {i} out of range for parameter `{}` (grid length {})",
                    p.name,
                    p.len()
                )));
            }
        }
        Ok(())
    }

    /// Parameter values selected by `point`.
    pub fn values(&self, point: &DesignPoint) -> Result<Vec<f64>> {
        self.check(point)?;
        Ok(self
            .params
            .iter()
            .zip(&point.indices)
            .map(|(p, &i)| p.grid[i])
            .collect())
    }

    /// Affine map of each parameter value from `[grid min, grid max]` onto
    /// `[-1, 1]`. Single-value grids map to 0.
    pub fn encode(&self, point: &DesignPoint) -> Result<Vec<f64>> {
        self.check(point)?;
        Ok(self
            .params
            .iter()
            .zip(&point.indices)
            .map(|(p, &i)| {
                let lo = p.grid[0];
                let hi = p.grid[p.len() - 1];
                if p.len() == 1 {
                    0.0
                } else {
                    2.0 * (p.grid[i] - lo) / (hi - lo) - 1.0
                }
            })
            .collect())
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            h.update([0u8]);
            for v in &p.grid {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// An index vector into a [`DesignSpace`], one index per parameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignPoint {
    pub indices: Vec<usize>,
}

impl DesignPoint {
    pub fn new(indices: Vec<usize>) -> Self {
        DesignPoint { indices }
    }
}

impl fmt::Display for DesignPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (n, i) in self.indices.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Satisfied when the measured value is at or above the threshold.
    AtLeast,
    /// Satisfied when the measured value is at or below the threshold.
    AtMost,
}

impl Direction {
    pub fn satisfied(self, value: f64, threshold: f64) -> bool {
        match self {
            Direction::AtLeast => value >= threshold,
            Direction::AtMost => value <= threshold,
        }
    }

    /// Whether `a` is strictly better than `b` in this direction.
    pub fn strictly_better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::AtLeast => a > b,
            Direction::AtMost => a < b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Direction::AtLeast => ">=",
            Direction::AtMost => "<=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecDef {
    pub name: String,
    pub direction: Direction,
    pub threshold: f64,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl SpecDef {
    pub fn new(name: impl Into<String>, direction: Direction, threshold: f64) -> Self {
        SpecDef {
            name: name.into(),
            direction,
            threshold,
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(Error::contract(format!(
                "spec `{}` has a non-finite threshold",
                self.name
            )));
        }
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::contract(format!(
                "spec `{}` has an invalid weight {}",
                self.name, self.weight
            )));
        }
        Ok(())
    }
}

/// Measured metric values of one design, keyed by spec name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Measurement {
    pub values: BTreeMap<String, f64>,
}

impl Measurement {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.values.insert(name.into(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<f64> {
        self.get(name)
            .ok_or_else(|| Error::contract(format!("measurement has no value for spec `{name}`")))
    }

    /// Checks there is exactly one finite value per spec.
    pub fn check_against(&self, specs: &[SpecDef]) -> Result<()> {
        for s in specs {
            let v = self.require(&s.name)?;
            if !v.is_finite() {
                return Err(Error::Evaluation(format!(
                    "non-finite value {v} for spec `{}`",
                    s.name
                )));
            }
        }
        if self.values.len() != specs.len() {
            let extra: Vec<_> = self
                .values
                .keys()
                .filter(|k| !specs.iter().any(|s| &s.name == *k))
                .cloned()
                .collect();
            return Err(Error::contract(format!(
                "measurement has values for unknown specs: {}",
                extra.join(", ")
            )));
        }
        Ok(())
    }
}

/// A problem instance: where to search and what to satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub space: DesignSpace,
    pub specs: Vec<SpecDef>,
}

impl Problem {
    pub fn new(space: DesignSpace, specs: Vec<SpecDef>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &specs {
            s.validate()?;
            if !seen.insert(s.name.as_str()) {
                return Err(Error::contract(format!("duplicate spec name `{}`", s.name)));
            }
        }
        if specs.is_empty() {
            return Err(Error::contract("problem has no specs"));
        }
        Ok(Problem { space, specs })
    }

    pub fn spec_index(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Stable hash over the space and all spec definitions.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.space.fingerprint().as_bytes());
        for s in &self.specs {
            h.update(s.name.as_bytes());
            h.update([0u8, s.direction as u8]);
            h.update(s.threshold.to_bits().to_le_bytes());
            h.update(s.weight.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// A simulated design with its penalties and total cost cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedDesign {
    pub point: DesignPoint,
    pub measurement: Measurement,
    /// Per-spec penalties, in spec order.
    pub penalties: Vec<f64>,
    pub cost: f64,
}

impl EvaluatedDesign {
    pub fn new(point: DesignPoint, measurement: Measurement, specs: &[SpecDef]) -> Result<Self> {
        measurement.check_against(specs)?;
        let report = cost::cost(&measurement, specs, None)?;
        Ok(EvaluatedDesign {
            point,
            measurement,
            penalties: report.penalties,
            cost: report.total,
        })
    }

    /// Cost restricted to the given spec indices.
    pub fn cost_over(&self, specs: &[SpecDef], subset: &[usize]) -> f64 {
        // Summed in spec order so the result matches `cost::cost` bit for bit.
        (0..specs.len())
            .filter(|i| subset.contains(i))
            .fold(0.0, |acc, i| acc + specs[i].weight * self.penalties[i])
    }

    /// Whether cached penalties and cost match a fresh recomputation exactly.
    pub fn is_consistent(&self, specs: &[SpecDef]) -> bool {
        match cost::cost(&self.measurement, specs, None) {
            Ok(r) => {
                r.total.to_bits() == self.cost.to_bits()
                    && r.penalties.len() == self.penalties.len()
                    && r
                        .penalties
                        .iter()
                        .zip(&self.penalties)
                        .all(|(a, b)| a.to_bits() == b.to_bits())
            }
            Err(_) => false,
        }
    }

    pub fn value(&self, spec: &SpecDef) -> f64 {
        self.measurement.get(&spec.name).unwrap_or(f64::NAN)
    }
}

/// Insertion-ordered population of evaluated designs, unique by design point.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "Vec<EvaluatedDesign>", into = "Vec<EvaluatedDesign>")]
pub struct Buffer {
    designs: Vec<EvaluatedDesign>,
    index: HashSet<DesignPoint>,
}

impl PartialEq for Buffer {
    fn eq(&self, other: &Self) -> bool {
        self.designs == other.designs
    }
}

impl From<Vec<EvaluatedDesign>> for Buffer {
    fn from(designs: Vec<EvaluatedDesign>) -> Self {
        Buffer::from_designs(designs)
    }
}

impl From<Buffer> for Vec<EvaluatedDesign> {
    fn from(b: Buffer) -> Self {
        b.designs
    }
}

impl Buffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_designs(designs: impl IntoIterator<Item = EvaluatedDesign>) -> Self {
        let mut b = Buffer::new();
        for d in designs {
            b.insert(d);
        }
        b
    }

    /// Appends `d` unless its point is already present. Returns whether it was added.
    pub fn insert(&mut self, d: EvaluatedDesign) -> bool {
        if self.contains(&d.point) {
            return false;
        }
        self.index.insert(d.point.clone());
        self.designs.push(d);
        true
    }

    pub fn contains(&self, point: &DesignPoint) -> bool {
        self.index.contains(point)
    }

    pub fn designs(&self) -> &[EvaluatedDesign] {
        &self.designs
    }

    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EvaluatedDesign> {
        self.designs.iter()
    }

    pub fn best_cost(&self) -> Option<f64> {
        self.designs.iter().map(|d| d.cost).reduce(f64::min)
    }

    /// Indices into the buffer sorted ascending by cost over `subset`
    /// (all specs when `None`). The sort is stable, so ties keep insertion order.
    pub fn ranked(&self, specs: &[SpecDef], subset: Option<&[usize]>) -> Vec<usize> {
        let keys: Vec<f64> = match subset {
            None => self.designs.iter().map(|d| d.cost).collect(),
            Some(s) => self.designs.iter().map(|d| d.cost_over(specs, s)).collect(),
        };
        let mut order: Vec<usize> = (0..self.designs.len()).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
        order
    }

    /// Mean full cost of the `m` best designs.
    pub fn mean_top_cost(&self, m: usize) -> f64 {
        let mut costs: Vec<f64> = self.designs.iter().map(|d| d.cost).collect();
        costs.sort_by(f64::total_cmp);
        let m = m.min(costs.len());
        if m == 0 {
            return f64::NAN;
        }
        costs[..m].iter().sum::<f64>() / m as f64
    }
}

impl<'a> IntoIterator for &'a Buffer {
    type Item = &'a EvaluatedDesign;
    type IntoIter = std::slice::Iter<'a, EvaluatedDesign>;

    fn into_iter(self) -> Self::IntoIter {
        self.designs.iter()
    }
}
