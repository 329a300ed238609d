use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::ComparatorNet;
use crate::domain::{Buffer, DesignSpace, SpecDef};
use crate::error::{Error, Result};

/// One labelled ordered pair. A label of 1 means A is preferred on that
/// spec, 0 means B is, 0.5 is an exact tie.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub xa: Vec<f64>,
    pub xb: Vec<f64>,
    pub labels: Vec<f64>,
}

impl PairExample {
    pub fn swapped(&self) -> PairExample {
        PairExample {
            xa: self.xb.clone(),
            xb: self.xa.clone(),
            labels: self.labels.iter().map(|l| 1.0 - l).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub mc_samples: usize,
    /// Upper bound on pairs per training call; larger sets are subsampled.
    pub max_pairs: usize,
    /// Stream seed; derived from the engine seed when unset.
    pub seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 64,
            dropout: 0.2,
            mc_samples: 5,
            max_pairs: 50_000,
            seed: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::contract(format!("train config: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be positive");
        }
        if self.max_pairs == 0 {
            return bad("max_pairs must be positive");
        }
        Ok(())
    }
}

fn label(spec: &SpecDef, a: f64, b: f64) -> f64 {
    if spec.direction.strictly_better(a, b) {
        1.0
    } else if spec.direction.strictly_better(b, a) {
        0.0
    } else {
        0.5
    }
}

/// Every ordered pair of distinct buffer designs, labelled per spec.
pub fn make_pairs(buffer: &Buffer, space: &DesignSpace, specs: &[SpecDef]) -> Result<Vec<PairExample>> {
    let encoded: Vec<Vec<f64>> = buffer
        .iter()
        .map(|d| space.encode(&d.point))
        .collect::<Result<_>>()?;
    let values: Vec<Vec<f64>> = buffer
        .iter()
        .map(|d| specs.iter().map(|s| d.measurement.require(&s.name)).collect())
        .collect::<Result<_>>()?;
    let n = buffer.len();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1));
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let labels = specs
                .iter()
                .enumerate()
                .map(|(i, s)| label(s, values[a][i], values[b][i]))
                .collect();
            pairs.push(PairExample {
                xa: encoded[a].clone(),
                xb: encoded[b].clone(),
                labels,
            });
        }
    }
    Ok(pairs)
}

/// Uniform subsample without replacement, keeping the original order.
pub fn subsample<R: Rng + ?Sized>(pairs: Vec<PairExample>, max: usize, rng: &mut R) -> Vec<PairExample> {
    if pairs.len() <= max {
        return pairs;
    }
    let mut keep = index::sample(rng, pairs.len(), max).into_vec();
    keep.sort_unstable();
    let mut keep = keep.into_iter().peekable();
    pairs
        .into_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(p)
            } else {
                None
            }
        })
        .collect()
}

/// Shuffled minibatch SGD on the summed per-spec cross-entropy, dropout on.
/// Returns the mean per-pair loss of each epoch.
pub fn train<R: Rng + ?Sized>(
    net: &mut ComparatorNet,
    data: &[PairExample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    let heads = net.shape().heads;
    if let Some(bad) = data.iter().find(|p| p.labels.len() != heads) {
        return Err(Error::contract(format!(
            "pair has {} labels, network has {heads} heads",
            bad.labels.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let compiled = net.compile();
            let mut grad = compiled.zero_grad();
            for &i in batch {
                let p = &data[i];
                let masks = net.sample_masks(rng);
                total += compiled.loss_and_grad(&p.xa, &p.xb, &p.labels, masks.as_ref(), &mut grad);
            }
            let step = net.fold_gradient(&grad);
            net.add_scaled(&step, -cfg.learning_rate / batch.len() as f64);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok(history)
}
