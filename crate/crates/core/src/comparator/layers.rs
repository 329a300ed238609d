use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layer `y = W x + b`, with `W` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let mut d = Dense::zeros(rows, cols);
        for w in &mut d.weight {
            *w = rng.random_range(-a..=a);
        }
        d
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.weight[i * self.cols + j]
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (i, out) in y.iter_mut().enumerate() {
            let row = &self.weight[i * self.cols..(i + 1) * self.cols];
            *out = self.bias[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates `dW += dy x^T`, `db += dy` into `grad` and writes `W^T dy` to `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: &mut [f64]) {
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (i, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[i] += g;
            let off = i * self.cols;
            let row = &self.weight[off..off + self.cols];
            let grow = &mut grad.weight[off..off + self.cols];
            for j in 0..self.cols {
                grow[j] += g * x[j];
                dx[j] += g * row[j];
            }
        }
    }

    pub(crate) fn tensors(&self) -> [&Vec<f64>; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// A layer whose bottom half of outputs is the 180°-rotated copy of the top half.
///
/// Only the top `m/2` rows are free parameters. With `k2 = 2k` inputs the
/// materialized layer satisfies
///
/// ```text
/// W[m/2 + i][j] = W[m/2 - 1 - i][k2 - 1 - j]
/// b[m/2 + i]    = b[m/2 - 1 - i]
/// ```
///
/// so reversing the input vector reverses the output vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricLayer {
    /// Free rows, `m/2`.
    pub half_rows: usize,
    /// Input width, `2k`.
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SymmetricLayer {
    /// A zero layer with `rows` outputs; `rows` must be even and positive.
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || rows % 2 != 0 {
            return Err(Error::Construction(format!(
                "symmetric layer needs an even, positive output width, got {rows}"
            )));
        }
        if cols == 0 {
            return Err(Error::Construction("symmetric layer needs inputs".into()));
        }
        let half_rows = rows / 2;
        Ok(SymmetricLayer {
            half_rows,
            cols,
            weight: vec![0.0; half_rows * cols],
            bias: vec![0.0; half_rows],
        })
    }

    pub fn from_parts(half_rows: usize, cols: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let mut l = Self::zeros(half_rows * 2, cols)?;
        if weight.len() != l.weight.len() || bias.len() != l.bias.len() {
            return Err(Error::Construction("symmetric layer parameter shapes do not match".into()));
        }
        l.weight = weight;
        l.bias = bias;
        Ok(l)
    }

    /// Glorot-uniform over the full layer's fan, applied to the free half.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Self> {
        let mut l = Self::zeros(rows, cols)?;
        let a = (6.0 / (rows + cols) as f64).sqrt();
        for w in &mut l.weight {
            *w = rng.random_range(-a..=a);
        }
        Ok(l)
    }

    pub fn rows(&self) -> usize {
        self.half_rows * 2
    }

    pub fn materialize(&self) -> Dense {
        let (h, c) = (self.half_rows, self.cols);
        let mut d = Dense::zeros(2 * h, c);
        d.weight[..h * c].copy_from_slice(&self.weight);
        d.bias[..h].copy_from_slice(&self.bias);
        for i in 0..h {
            let src = h - 1 - i;
            for j in 0..c {
                d.weight[(h + i) * c + j] = self.weight[src * c + (c - 1 - j)];
            }
            d.bias[h + i] = self.bias[src];
        }
        d
    }

    /// Folds a gradient over the materialized layer back onto the free
    /// parameters: each free entry collects both of its mirror positions.
    pub fn fold_gradient(&self, full: &Dense, into: &mut SymmetricLayer) {
        let (h, c) = (self.half_rows, self.cols);
        debug_assert_eq!(full.rows, 2 * h);
        for i in 0..h {
            for j in 0..c {
                into.weight[i * c + j] += full.weight[i * c + j];
            }
            into.bias[i] += full.bias[i];
        }
        for i in 0..h {
            let dst = h - 1 - i;
            for j in 0..c {
                into.weight[dst * c + (c - 1 - j)] += full.weight[(h + i) * c + j];
            }
            into.bias[dst] += full.bias[h + i];
        }
    }

    pub(crate) fn tensors(&self) -> [&Vec<f64>; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
