use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Dense, SymmetricLayer};
use crate::error::{Error, Result};

/// Layer widths and dropout rate of a [`ComparatorNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub input_dim: usize,
    pub feature_width: usize,
    pub feature_layers: usize,
    /// Hidden width of every per-spec head; must be even.
    pub head_width: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl NetShape {
    pub fn new(input_dim: usize, heads: usize) -> Self {
        NetShape {
            input_dim,
            feature_width: 20,
            feature_layers: 2,
            head_width: 20,
            heads,
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.heads == 0 || self.feature_width == 0 || self.feature_layers == 0 {
            return Err(Error::Construction(format!("degenerate network shape {self:?}")));
        }
        if self.head_width == 0 || self.head_width % 2 != 0 {
            return Err(Error::Construction(format!(
                "head width must be even and positive, got {}",
                self.head_width
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Construction(format!(
                "dropout rate {} is outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub hidden: SymmetricLayer,
    pub output: SymmetricLayer,
}

/// Pairwise comparator: a shared feature extractor applied to both designs
/// and one mirrored decision head per spec.
///
/// Head inputs are laid out as `[f_A, reverse(f_B)]`, so swapping the two
/// designs reverses the head input. The mirrored layers then reverse every
/// head activation, and the two output logits trade places. The
/// probability `sigmoid(l0 - l1)` therefore becomes its complement, whatever
/// the parameters are.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparatorNet {
    shape: NetShape,
    seed: u64,
    pub extractor: Vec<Dense>,
    pub heads: Vec<Head>,
}

impl ComparatorNet {
    /// Glorot-initialised network from `seed`.
    pub fn new(shape: NetShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut extractor = Vec::with_capacity(shape.feature_layers);
        let mut cols = shape.input_dim;
        for _ in 0..shape.feature_layers {
            extractor.push(Dense::glorot(shape.feature_width, cols, &mut rng));
            cols = shape.feature_width;
        }
        let mut heads = Vec::with_capacity(shape.heads);
        for _ in 0..shape.heads {
            heads.push(Head {
                hidden: SymmetricLayer::glorot(shape.head_width, 2 * shape.feature_width, &mut rng)?,
                output: SymmetricLayer::glorot(2, shape.head_width, &mut rng)?,
            });
        }
        Ok(ComparatorNet {
            shape,
            seed,
            extractor,
            heads,
        })
    }

    pub fn zeros(shape: NetShape) -> Result<Self> {
        let mut net = Self::new(shape, 0)?;
        net.tensors_mut()
            .into_iter()
            .for_each(|t| t.iter_mut().for_each(|v| *v = 0.0));
        Ok(net)
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dropout(&self) -> f64 {
        self.shape.dropout
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        let mut shape = self.shape.clone();
        shape.dropout = rate;
        shape.validate()?;
        self.shape = shape;
        Ok(())
    }

    /// Parameter tensors in a fixed order: extractor layers, then for each
    /// head its hidden and output layers; weights before biases.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for l in &self.extractor {
            out.extend(l.tensors());
        }
        for h in &self.heads {
            out.extend(h.hidden.tensors());
            out.extend(h.output.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in &mut self.extractor {
            out.extend(l.tensors_mut());
        }
        for h in &mut self.heads {
            out.extend(h.hidden.tensors_mut());
            out.extend(h.output.tensors_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All free parameters, flattened in [`tensors`](Self::tensors) order.
    pub fn params(&self) -> Vec<f64> {
        self.tensors().into_iter().flatten().copied().collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// A zero-valued network of the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut()
            .into_iter()
            .for_each(|t| t.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ComparatorNet, scale: f64) {
        for (t, g) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (v, d) in t.iter_mut().zip(g) {
                *v += scale * d;
            }
        }
    }

    /// Materializes the mirrored layers for fast repeated evaluation.
    pub fn compile(&self) -> CompiledNet {
        CompiledNet {
            shape: self.shape.clone(),
            extractor: self.extractor.clone(),
            heads: self
                .heads
                .iter()
                .map(|h| (h.hidden.materialize(), h.output.materialize()))
                .collect(),
        }
    }

    /// Folds a gradient over the materialized network onto the free parameters.
    pub fn fold_gradient(&self, grad: &CompiledGrad) -> ComparatorNet {
        let mut out = self.zeros_like();
        for (dst, src) in out.extractor.iter_mut().zip(&grad.extractor) {
            dst.weight.copy_from_slice(&src.weight);
            dst.bias.copy_from_slice(&src.bias);
        }
        for ((h, dst), (gh, go)) in self.heads.iter().zip(out.heads.iter_mut()).zip(&grad.heads) {
            h.hidden.fold_gradient(gh, &mut dst.hidden);
            h.output.fold_gradient(go, &mut dst.output);
        }
        out
    }

    pub fn sample_masks<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<PairMasks> {
        sample_masks(&self.shape, rng)
    }

    /// Per-spec probabilities that A is preferred over B. With `dropout` on,
    /// one fresh set of masks is drawn from `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, xa: &[f64], xb: &[f64], dropout: bool, rng: &mut R) -> Result<Vec<f64>> {
        self.compile().forward(xa, xb, dropout, rng)
    }

    /// Mean of `n` dropout-on forward passes.
    pub fn mc_predict<R: Rng + ?Sized>(&self, xa: &[f64], xb: &[f64], n: usize, rng: &mut R) -> Result<Vec<f64>> {
        let heads: Vec<usize> = (0..self.shape.heads).collect();
        self.compile().mc_predict(xa, xb, &heads, n, rng)
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        let mut layers = Vec::new();
        for (n, l) in self.extractor.iter().enumerate() {
            layers.push(LayerDump {
                name: format!("extractor.{n}"),
                kind: LayerKind::Dense,
                rows: l.rows,
                cols: l.cols,
                weight: l.weight.clone(),
                bias: l.bias.clone(),
            });
        }
        for (n, h) in self.heads.iter().enumerate() {
            for (part, l) in [("hidden", &h.hidden), ("output", &h.output)] {
                layers.push(LayerDump {
                    name: format!("head.{n}.{part}"),
                    kind: LayerKind::Symmetric,
                    rows: l.rows(),
                    cols: l.cols,
                    weight: l.weight.clone(),
                    bias: l.bias.clone(),
                });
            }
        }
        NetCheckpoint {
            format: NET_FORMAT.to_owned(),
            version: NET_FORMAT_VERSION,
            shape: self.shape.clone(),
            seed: self.seed,
            layers,
        }
    }

    pub fn from_checkpoint(ckpt: &NetCheckpoint) -> Result<Self> {
        if ckpt.format != NET_FORMAT || ckpt.version != NET_FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "network checkpoint {} v{}, expected {NET_FORMAT} v{NET_FORMAT_VERSION}",
                ckpt.format, ckpt.version
            )));
        }
        let mut net = ComparatorNet::new(ckpt.shape.clone(), ckpt.seed)?;
        let expected = net.to_checkpoint();
        if expected.layers.len() != ckpt.layers.len() {
            return Err(Error::Incompatible("network checkpoint layer count mismatch".into()));
        }
        for (want, got) in expected.layers.iter().zip(&ckpt.layers) {
            if want.name != got.name
                || want.kind != got.kind
                || want.rows != got.rows
                || want.cols != got.cols
                || want.weight.len() != got.weight.len()
                || want.bias.len() != got.bias.len()
            {
                return Err(Error::Incompatible(format!("layer `{}` does not match the manifest", got.name)));
            }
        }
        let flat: Vec<f64> = ckpt
            .layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
            .collect();
        net.set_params(&flat)?;
        Ok(net)
    }
}

pub const NET_FORMAT: &str = "specgate-comparator";
pub const NET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    /// Only the top half of rows is stored; see [`SymmetricLayer`].
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDump {
    pub name: String,
    pub kind: LayerKind,
    /// Full output width (including the mirrored half for symmetric layers).
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Serialized network: a manifest of shapes plus the free parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format: String,
    pub version: u32,
    pub shape: NetShape,
    pub seed: u64,
    pub layers: Vec<LayerDump>,
}

/// Inverted-dropout scale factors for one forward pass over a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMasks {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub heads: Vec<Vec<f64>>,
}

impl PairMasks {
    /// The masks that make a forward pass on `(B, A)` mirror one on `(A, B)`.
    pub fn swapped(&self) -> PairMasks {
        PairMasks {
            a: self.b.clone(),
            b: self.a.clone(),
            heads: self
                .heads
                .iter()
                .map(|m| m.iter().rev().copied().collect())
                .collect(),
        }
    }
}

fn sample_masks<R: Rng + ?Sized>(shape: &NetShape, rng: &mut R) -> Option<PairMasks> {
    let p = shape.dropout;
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect()
    };
    let a = (0..shape.feature_layers).map(|_| draw(shape.feature_width)).collect();
    let b = (0..shape.feature_layers).map(|_| draw(shape.feature_width)).collect();
    let heads = (0..shape.heads).map(|_| draw(shape.head_width)).collect();
    Some(PairMasks { a, b, heads })
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`, computed stably.
#[inline]
pub(crate) fn cross_entropy_logit(logit: f64, label: f64) -> f64 {
    label * softplus(-logit) + (1.0 - label) * softplus(logit)
}

/// A network with its mirrored layers expanded into plain dense layers.
#[derive(Debug, Clone)]
pub struct CompiledNet {
    shape: NetShape,
    extractor: Vec<Dense>,
    heads: Vec<(Dense, Dense)>,
}

/// Gradient with respect to the materialized layers of a [`CompiledNet`].
#[derive(Debug, Clone)]
pub struct CompiledGrad {
    pub extractor: Vec<Dense>,
    pub heads: Vec<(Dense, Dense)>,
}

struct PathTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
}

struct HeadTrace {
    head: usize,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logit_diff: f64,
}

impl CompiledNet {
    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn zero_grad(&self) -> CompiledGrad {
        CompiledGrad {
            extractor: self.extractor.iter().map(|l| Dense::zeros(l.rows, l.cols)).collect(),
            heads: self
                .heads
                .iter()
                .map(|(h, o)| (Dense::zeros(h.rows, h.cols), Dense::zeros(o.rows, o.cols)))
                .collect(),
        }
    }

    fn check_inputs(&self, xa: &[f64], xb: &[f64]) -> Result<()> {
        if xa.len() != self.shape.input_dim || xb.len() != self.shape.input_dim {
            return Err(Error::contract(format!(
                "network expects inputs of length {}, got {} and {}",
                self.shape.input_dim,
                xa.len(),
                xb.len()
            )));
        }
        Ok(())
    }

    fn path(&self, x: &[f64], masks: Option<&[Vec<f64>]>) -> PathTrace {
        let mut inputs = Vec::with_capacity(self.extractor.len());
        let mut pre = Vec::with_capacity(self.extractor.len());
        let mut cur = x.to_vec();
        for (l, layer) in self.extractor.iter().enumerate() {
            let mut z = vec![0.0; layer.rows];
            layer.forward(&cur, &mut z);
            let mut next: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            if let Some(m) = masks {
                next.iter_mut().zip(&m[l]).for_each(|(v, s)| *v *= s);
            }
            inputs.push(std::mem::replace(&mut cur, next));
            pre.push(z);
        }
        PathTrace { inputs, pre, out: cur }
    }

    fn head_input(fa: &[f64], fb: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(fa.len() * 2);
        z.extend_from_slice(fa);
        z.extend(fb.iter().rev());
        z
    }

    fn head(&self, h: usize, z: &[f64], mask: Option<&[f64]>) -> HeadTrace {
        let (hidden, output) = &self.heads[h];
        let mut pre = vec![0.0; hidden.rows];
        hidden.forward(z, &mut pre);
        let mut act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        if let Some(m) = mask {
            act.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
        }
        let mut logits = [0.0; 2];
        output.forward(&act, &mut logits);
        HeadTrace {
            head: h,
            pre,
            hidden: act,
            logit_diff: logits[0] - logits[1],
        }
    }

    fn run(&self, xa: &[f64], xb: &[f64], heads: &[usize], masks: Option<&PairMasks>) -> (PathTrace, PathTrace, Vec<f64>, Vec<HeadTrace>) {
        let pa = self.path(xa, masks.map(|m| m.a.as_slice()));
        let pb = self.path(xb, masks.map(|m| m.b.as_slice()));
        let z = Self::head_input(&pa.out, &pb.out);
        let traces = heads
            .iter()
            .map(|&h| self.head(h, &z, masks.map(|m| m.heads[h].as_slice())))
            .collect();
        (pa, pb, z, traces)
    }

    /// Probabilities for the listed heads under explicit dropout masks
    /// (`None` means dropout off).
    pub fn forward_masked(&self, xa: &[f64], xb: &[f64], heads: &[usize], masks: Option<&PairMasks>) -> Result<Vec<f64>> {
        self.check_inputs(xa, xb)?;
        if let Some(&h) = heads.iter().find(|&&h| h >= self.heads.len()) {
            return Err(Error::contract(format!("no head {h}")));
        }
        let (_, _, _, traces) = self.run(xa, xb, heads, masks);
        Ok(traces.iter().map(|t| sigmoid(t.logit_diff)).collect())
    }

    pub fn forward<R: Rng + ?Sized>(&self, xa: &[f64], xb: &[f64], dropout: bool, rng: &mut R) -> Result<Vec<f64>> {
        let heads: Vec<usize> = (0..self.heads.len()).collect();
        let masks = if dropout { sample_masks(&self.shape, rng) } else { None };
        self.forward_masked(xa, xb, &heads, masks.as_ref())
    }

    /// Mean over `n` dropout-on passes for the listed heads. With a zero
    /// dropout rate this is the single deterministic pass.
    pub fn mc_predict<R: Rng + ?Sized>(&self, xa: &[f64], xb: &[f64], heads: &[usize], n: usize, rng: &mut R) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::contract("MC dropout needs at least one sample"));
        }
        if self.shape.dropout == 0.0 {
            return self.forward_masked(xa, xb, heads, None);
        }
        let mut acc = vec![0.0; heads.len()];
        for _ in 0..n {
            let masks = sample_masks(&self.shape, rng);
            let p = self.forward_masked(xa, xb, heads, masks.as_ref())?;
            acc.iter_mut().zip(&p).for_each(|(a, v)| *a += v);
        }
        Ok(acc.into_iter().map(|a| a / n as f64).collect())
    }

    /// Summed cross-entropy over all heads for one labelled pair; the
    /// gradient is accumulated into `grad`.
    pub fn loss_and_grad(
        &self,
        xa: &[f64],
        xb: &[f64],
        labels: &[f64],
        masks: Option<&PairMasks>,
        grad: &mut CompiledGrad,
    ) -> f64 {
        let all: Vec<usize> = (0..self.heads.len()).collect();
        let (pa, pb, z, traces) = self.run(xa, xb, &all, masks);
        let k = self.shape.feature_width;
        let mut dz = vec![0.0; z.len()];
        let mut dz_head = vec![0.0; z.len()];
        let mut loss = 0.0;
        for t in &traces {
            let h = t.head;
            let y = labels[h];
            loss += cross_entropy_logit(t.logit_diff, y);
            let g = sigmoid(t.logit_diff) - y;
            let (hidden, output) = &self.heads[h];
            let (g_hidden, g_output) = &mut grad.heads[h];
            let mut dh = vec![0.0; hidden.rows];
            output.backward(&t.hidden, &[g, -g], g_output, &mut dh);
            let mask = masks.map(|m| m.heads[h].as_slice());
            for (i, d) in dh.iter_mut().enumerate() {
                let s = mask.map_or(1.0, |m| m[i]);
                if t.pre[i] <= 0.0 {
                    *d = 0.0;
                } else {
                    *d *= s;
                }
            }
            hidden.backward(&z, &dh, g_hidden, &mut dz_head);
            dz.iter_mut().zip(&dz_head).for_each(|(a, b)| *a += b);
        }
        let dfa = dz[..k].to_vec();
        let dfb: Vec<f64> = dz[k..].iter().rev().copied().collect();
        self.path_backward(&pa, dfa, masks.map(|m| m.a.as_slice()), grad);
        self.path_backward(&pb, dfb, masks.map(|m| m.b.as_slice()), grad);
        loss
    }

    /// Summed cross-entropy over all heads, no gradient.
    pub fn loss(&self, xa: &[f64], xb: &[f64], labels: &[f64], masks: Option<&PairMasks>) -> f64 {
        let all: Vec<usize> = (0..self.heads.len()).collect();
        let (_, _, _, traces) = self.run(xa, xb, &all, masks);
        traces
            .iter()
            .map(|t| cross_entropy_logit(t.logit_diff, labels[t.head]))
            .sum()
    }

    fn path_backward(&self, trace: &PathTrace, mut dout: Vec<f64>, masks: Option<&[Vec<f64>]>, grad: &mut CompiledGrad) {
        for l in (0..self.extractor.len()).rev() {
            let pre = &trace.pre[l];
            for (i, d) in dout.iter_mut().enumerate() {
                if pre[i] <= 0.0 {
                    *d = 0.0;
                } else if let Some(m) = masks {
                    *d *= m[l][i];
                }
            }
            let layer = &self.extractor[l];
            let mut dx = vec![0.0; layer.cols];
            layer.backward(&trace.inputs[l], &dout, &mut grad.extractor[l], &mut dx);
            dout = dx;
        }
    }
}
