//! μ+λ evolutionary operators on grid indices.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{Buffer, DesignPoint, DesignSpace, EvaluatedDesign};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoConfig {
    /// Fraction of the cost-sorted buffer eligible as parents.
    pub parent_fraction: f64,
    pub tournament_size: usize,
    pub crossover_prob: f64,
    /// Blend weight spread: the child keeps `α ~ U[1 - blend_alpha, 1]` of
    /// its crossover gene and takes the rest from the other parent.
    pub blend_alpha: f64,
    /// Per-gene mutation probability.
    pub mutation_prob: f64,
    /// Mutation standard deviation in grid steps. `None` uses 2% of each
    /// parameter's grid length (at least one step).
    pub mutation_sigma: Option<f64>,
    /// Stream seed; derived from the engine seed when unset.
    pub seed: Option<u64>,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            parent_fraction: 0.25,
            tournament_size: 3,
            crossover_prob: 0.9,
            blend_alpha: 0.5,
            mutation_prob: 0.1,
            mutation_sigma: None,
            seed: None,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::contract(format!("evolution config: {m}")));
        if !(self.parent_fraction > 0.0 && self.parent_fraction <= 1.0) {
            return bad("parent_fraction must lie in (0, 1]");
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be positive");
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("blend_alpha", self.blend_alpha),
            ("mutation_prob", self.mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if let Some(s) = self.mutation_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad("mutation_sigma must be positive");
            }
        }
        Ok(())
    }

    fn sigma(&self, grid_len: usize) -> f64 {
        self.mutation_sigma
            .unwrap_or_else(|| (0.02 * grid_len as f64).max(1.0))
    }
}

/// Source of new candidate designs. Implementations are handed a fresh
/// [`ParentPool`] each iteration.
pub trait Generator {
    fn generate<R: Rng + ?Sized>(&self, pool: &ParentPool<'_>, space: &DesignSpace, rng: &mut R) -> Result<DesignPoint>;
}

/// The best designs of a buffer, best first.
#[derive(Debug, Clone)]
pub struct ParentPool<'a> {
    parents: Vec<&'a DesignPoint>,
}

impl<'a> ParentPool<'a> {
    pub fn new(buffer: &'a Buffer, fraction: f64) -> Result<Self> {
        if buffer.len() < 2 {
            return Err(Error::contract(format!(
                "need at least 2 designs to breed, buffer has {}",
                buffer.len()
            )));
        }
        let n = ((buffer.len() as f64 * fraction).ceil() as usize).clamp(2, buffer.len());
        let parents = buffer
            .ranked(&[], None)
            .into_iter()
            .take(n)
            .map(|i| &buffer.designs()[i].point)
            .collect();
        Ok(ParentPool { parents })
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    fn tournament<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> usize {
        (0..size)
            .map(|_| rng.random_range(0..self.parents.len()))
            .min()
            .unwrap_or(0)
    }
}

/// Tournament selection, uniform crossover, blending and Gaussian integer
/// mutation, in that order.
#[derive(Debug, Clone, Default)]
pub struct MuPlusLambda {
    pub cfg: EvoConfig,
}

impl MuPlusLambda {
    pub fn new(cfg: EvoConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(MuPlusLambda { cfg })
    }
}

impl Generator for MuPlusLambda {
    fn generate<R: Rng + ?Sized>(&self, pool: &ParentPool<'_>, space: &DesignSpace, rng: &mut R) -> Result<DesignPoint> {
        let cfg = &self.cfg;
        let first = pool.tournament(cfg.tournament_size, rng);
        let mut second = pool.tournament(cfg.tournament_size, rng);
        for _ in 0..8 {
            if second != first {
                break;
            }
            second = pool.tournament(cfg.tournament_size, rng);
        }
        let (p1, p2) = (pool.parents[first], pool.parents[second]);
        space.check(p1)?;
        space.check(p2)?;

        let crossover = rng.random::<f64>() < cfg.crossover_prob;
        let mut child = Vec::with_capacity(space.dim());
        for (j, param) in space.params().iter().enumerate() {
            let (mut own, mut other) = (p1.indices[j] as f64, p2.indices[j] as f64);
            if crossover && rng.random::<bool>() {
                std::mem::swap(&mut own, &mut other);
            }
            let alpha = 1.0 - cfg.blend_alpha * rng.random::<f64>();
            let mut gene = (alpha * own + (1.0 - alpha) * other).round();
            if rng.random::<f64>() < cfg.mutation_prob {
                let normal = Normal::new(0.0, cfg.sigma(param.len()))
                    .map_err(|e| Error::contract(format!("mutation sigma: {e}")))?;
                gene += normal.sample(rng).round();
            }
            child.push(gene.clamp(0.0, (param.len() - 1) as f64) as usize);
        }
        Ok(DesignPoint::new(child))
    }
}

/// One offspring from `buffer` with the default operator set.
pub fn generate<R: Rng + ?Sized>(buffer: &Buffer, space: &DesignSpace, cfg: &EvoConfig, rng: &mut R) -> Result<DesignPoint> {
    let pool = ParentPool::new(buffer, cfg.parent_fraction)?;
    MuPlusLambda::new(cfg.clone())?.generate(&pool, space, rng)
}

/// Elitist truncation: the `mu` cheapest designs of `population + offspring`
/// (duplicates dropped, ties to the earlier entry), kept in union order.
pub fn select(population: &Buffer, offspring: &[EvaluatedDesign], mu: usize) -> Buffer {
    let mut union = population.clone();
    for d in offspring {
        union.insert(d.clone());
    }
    let mut keep = vec![false; union.len()];
    for i in union.ranked(&[], None).into_iter().take(mu) {
        keep[i] = true;
    }
    Buffer::from_designs(
        union
            .designs()
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(d, _)| d.clone()),
    )
}
