//! Reverse-mode differentiation over a recorded forward pass.
//!
//! A [`Tape`] records every operation of one forward pass over a batch. All
//! batched values carry the batch as their leading axis. [`Tape::backward`]
//! walks the record in reverse and returns gradients for every leaf that
//! requires them; dropout masks sampled during the forward pass are replayed.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::kernels::{self, ConvGeometry, LstmCache, Padding};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identity of a trainable parameter tensor within a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Lower bound applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Relu(Var),
    Dropout { x: Var, keep: Vec<bool>, scale: T },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeometry },
    Dense { x: Var, w: Var, b: Var },
    Reshape(Var),
    ToSequence { x: Var, dims: [usize; 4] },
    Concat { parts: Vec<Var>, widths: Vec<usize> },
    Lstm { x: Var, w_ih: Var, w_hh: Var, b: Var, cache: Box<LstmCache<T>> },
    Softmax(Var),
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Vec<T>, clamped: Vec<bool>, divisor: T },
    Sum(Var),
    Mul(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], one per differentiable leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: BTreeMap<usize, Tensor<T>>,
    params: BTreeMap<ParamId, usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf recorded with [`Tape::leaf`] or [`Tape::param`].
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|n| self.leaves.get(n))
    }

    /// Gradients keyed by parameter identity.
    pub fn into_param_map(mut self) -> BTreeMap<ParamId, Tensor<T>> {
        self.params
            .into_iter()
            .filter_map(|(id, n)| self.leaves.remove(&n).map(|g| (id, g)))
            .collect()
    }
}

fn batch_of<T: Scalar>(t: &Tensor<T>) -> usize {
    t.shape().first().copied().unwrap_or(1)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf that is not a network parameter.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId, t: Tensor<T>) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Elementwise product of two equally shaped values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!("mul of {:?} and {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Inverted dropout: each element is zeroed with probability `rate` and
    /// survivors are scaled by `1 / (1 - rate)`. With `rng == None` this is
    /// the identity (evaluation mode).
    pub fn dropout(&mut self, x: Var, rate: f64, rng: Option<&mut Rng>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = rng else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let scale = T::lit(1.0 / (1.0 - rate));
        let src = self.value(x);
        let keep = rng.keep_mask(src.len(), rate);
        let data = src
            .data()
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v * scale } else { T::zero() })
            .collect();
        let value = Tensor::from_parts(src.shape().to_vec(), data);
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout { x, keep, scale }, rg))
    }

    /// Batched 2-D cross-correlation, stride 1. `x` is `[B, C, H, W]`,
    /// `w` is `[O, C, kh, kw]` and `b` is `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: (Padding, Padding)) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(Error::shape(format!(
                "conv2d input {xs:?} incompatible with filters {ws:?}"
            )));
        }
        if self.value(b).shape() != [ws[0]] {
            return Err(Error::shape(format!(
                "conv2d bias {:?} for {} filters",
                self.value(b).shape(),
                ws[0]
            )));
        }
        let geom = ConvGeometry::new((xs[1], xs[2], xs[3]), (ws[0], ws[2], ws[3]), padding)
            .ok_or_else(|| {
                Error::shape(format!("filter {ws:?} larger than padded input {xs:?}"))
            })?;
        let out = kernels::conv2d_forward(
            &geom,
            xs[0],
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let value = Tensor::from_parts(vec![xs[0], geom.out_c, geom.out_h, geom.out_w], out);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// `x W + b` for `x` `[B, in]`, `W` `[in, out]`, `b` `[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || self.value(b).shape() != [ws[1]] {
            return Err(Error::shape(format!(
                "dense input {xs:?} incompatible with weight {ws:?} / bias {:?}",
                self.value(b).shape()
            )));
        }
        let y = kernels::dense_forward(
            xs[0],
            ws[0],
            ws[1],
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let value = Tensor::from_parts(vec![xs[0], ws[1]], y);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Dense { x, w, b }, rg))
    }

    /// `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let b = batch_of(v);
        let value = Tensor::from_parts(vec![b, v.len() / b], v.data().to_vec());
        let rg = self.rg(x);
        self.push(value, Op::Reshape(x), rg)
    }

    /// Reorders a feature map `[B, C, H, W]` into a sequence `[B, W, C*H]`
    /// whose time axis is the width axis.
    pub fn to_sequence(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!("to_sequence expects [B, C, H, W], got {s:?}")));
        }
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..bn {
            for ci in 0..c {
                for hi in 0..h {
                    let row = &src[((b * c + ci) * h + hi) * w..][..w];
                    for (t, &v) in row.iter().enumerate() {
                        out[(b * w + t) * c * h + ci * h + hi] = v;
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![bn, w, c * h], out);
        let rg = self.rg(x);
        Ok(self.push(value, Op::ToSequence { x, dims: [bn, c, h, w] }, rg))
    }

    /// Channel concatenation of `[B, C_i, H, W]` values in argument order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of no values"))?;
        let s0 = self.value(*first).shape().to_vec();
        if s0.len() != 4 {
            return Err(Error::shape(format!("concat expects [B, C, H, W], got {s0:?}")));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3] {
                return Err(Error::shape(format!("concat spatial mismatch {s0:?} vs {s:?}")));
            }
            widths.push(s[1] * s[2] * s[3]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(s0[0] * total);
        for b in 0..s0[0] {
            for (p, &wd) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[b * wd..(b + 1) * wd]);
            }
        }
        let channels = total / (s0[2] * s0[3]);
        let value = Tensor::from_parts(vec![s0[0], channels, s0[2], s0[3]], out);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                widths,
            },
            rg,
        ))
    }

    /// LSTM over `x` `[B, T, F]`; yields the final hidden state `[B, U]`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let wi = self.value(w_ih).shape().to_vec();
        let wh = self.value(w_hh).shape().to_vec();
        if wh.len() != 2 || wh[0] != 4 * wh[1] {
            return Err(Error::shape(format!("recurrent weights {wh:?} are not [4U, U]")));
        }
        let units = wh[1];
        if xs.len() != 3 || wi != [4 * units, xs[2]] || self.value(b).shape() != [4 * units] {
            return Err(Error::shape(format!(
                "lstm input {xs:?} incompatible with input weights {wi:?} / {units} units"
            )));
        }
        let (out, cache) = kernels::lstm_forward(
            xs[0],
            xs[1],
            xs[2],
            units,
            self.value(x).data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(b).data(),
        );
        let value = Tensor::from_parts(vec![xs[0], units], out);
        let rg = self.rg(x) || self.rg(w_ih) || self.rg(w_hh) || self.rg(b);
        Ok(self.push(
            value,
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                b,
                cache: Box::new(cache),
            },
            rg,
        ))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let c = *v.shape().last().unwrap_or(&1);
        let mut out = v.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        let value = Tensor::from_parts(v.shape().to_vec(), out);
        let rg = self.rg(x);
        self.push(value, Op::Softmax(x), rg)
    }

    /// `sum_b -ln(max(softmax(logits_b)[label_b], 1e-12)) / divisor` as a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], divisor: f64) -> Result<Var> {
        let v = self.value(logits);
        if v.rank() != 2 || v.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "cross entropy over logits {:?} with {} labels",
                v.shape(),
                labels.len()
            )));
        }
        let c = v.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Index(format!("label {bad} with {c} classes")));
        }
        let mut probs = v.data().to_vec();
        let floor = T::lit(PROB_FLOOR);
        let mut total = T::zero();
        let mut clamped = Vec::with_capacity(labels.len());
        for (row, &l) in probs.chunks_exact_mut(c).zip(labels) {
            softmax_in_place(row);
            let p = row[l];
            clamped.push(p < floor);
            total += -(p.max(floor)).ln();
        }
        let divisor = T::lit(divisor);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / divisor),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
                clamped,
                divisor,
            },
            rg,
        ))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![T::one()]));
        let mut leaves = BTreeMap::new();
        let mut params = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = node.op {
                if let Some(id) = node.param {
                    params.insert(id, idx);
                }
                leaves.insert(idx, g);
                continue;
            }
            self.propagate(&node.op, &node.value, g, &mut grads)?;
        }
        // leaves that never received a gradient still get an explicit zero
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                leaves
                    .entry(idx)
                    .or_insert_with(|| Tensor::from_parts(node.value.shape().to_vec(), vec![T::zero(); node.value.len()]));
                if let Some(id) = node.param {
                    params.insert(id, idx);
                }
            }
        }
        Ok(Gradients { leaves, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (a, &b) in existing.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn zeros_like(&self, v: Var) -> Vec<T> {
        vec![T::zero(); self.value(v).len()]
    }

    fn shaped(&self, v: Var, data: Vec<T>) -> Tensor<T> {
        Tensor::from_parts(self.value(v).shape().to_vec(), data)
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *b, g.clone());
                self.accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da = g.data().iter().zip(vb).map(|(&d, &y)| d * y).collect();
                let db = g.data().iter().zip(va).map(|(&d, &x)| d * x).collect();
                self.accumulate(grads, *a, self.shaped(*a, da));
                self.accumulate(grads, *b, self.shaped(*b, db));
            }
            Op::Relu(x) => {
                // subgradient 0 at exactly 0
                let dx = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, self.shaped(*x, dx));
            }
            Op::Dropout { x, keep, scale } => {
                let dx = g
                    .data()
                    .iter()
                    .zip(keep)
                    .map(|(&d, &k)| if k { d * *scale } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, self.shaped(*x, dx));
            }
            Op::Conv2d { x, w, b, geom } => {
                let batch = batch_of(self.value(*x));
                let mut dw = self.zeros_like(*w);
                let mut db = self.zeros_like(*b);
                let mut dx = self.rg(*x).then(|| self.zeros_like(*x));
                kernels::conv2d_backward(
                    geom,
                    batch,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    &mut dw,
                    &mut db,
                    dx.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, self.shaped(*x, dx));
                }
                self.accumulate(grads, *w, self.shaped(*w, dw));
                self.accumulate(grads, *b, self.shaped(*b, db));
            }
            Op::Dense { x, w, b } => {
                let xs = self.value(*x).shape();
                let outputs = self.value(*b).len();
                let mut dw = self.zeros_like(*w);
                let mut db = self.zeros_like(*b);
                let mut dx = self.rg(*x).then(|| self.zeros_like(*x));
                kernels::dense_backward(
                    xs[0],
                    xs[1],
                    outputs,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    &mut dw,
                    &mut db,
                    dx.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, self.shaped(*x, dx));
                }
                self.accumulate(grads, *w, self.shaped(*w, dw));
                self.accumulate(grads, *b, self.shaped(*b, db));
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, self.shaped(*x, g.into_data()));
            }
            Op::ToSequence { x, dims } => {
                let [bn, c, h, w] = *dims;
                let src = g.data();
                let mut dx = vec![T::zero(); src.len()];
                for b in 0..bn {
                    for ci in 0..c {
                        for hi in 0..h {
                            let row = &mut dx[((b * c + ci) * h + hi) * w..][..w];
                            for (t, v) in row.iter_mut().enumerate() {
                                *v = src[(b * w + t) * c * h + ci * h + hi];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, self.shaped(*x, dx));
            }
            Op::Concat { parts, widths } => {
                let total: usize = widths.iter().sum();
                let batch = out.len() / total;
                let mut offset = 0;
                for (p, &wd) in parts.iter().zip(widths) {
                    if self.rg(*p) {
                        let mut dp = Vec::with_capacity(batch * wd);
                        for b in 0..batch {
                            dp.extend_from_slice(&g.data()[b * total + offset..][..wd]);
                        }
                        self.accumulate(grads, *p, self.shaped(*p, dp));
                    }
                    offset += wd;
                }
            }
            Op::Lstm { x, w_ih, w_hh, b, cache } => {
                let mut dwi = self.zeros_like(*w_ih);
                let mut dwh = self.zeros_like(*w_hh);
                let mut db = self.zeros_like(*b);
                let mut dx = self.rg(*x).then(|| self.zeros_like(*x));
                kernels::lstm_backward(
                    cache,
                    self.value(*x).data(),
                    self.value(*w_ih).data(),
                    self.value(*w_hh).data(),
                    g.data(),
                    &mut dwi,
                    &mut dwh,
                    &mut db,
                    dx.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, self.shaped(*x, dx));
                }
                self.accumulate(grads, *w_ih, self.shaped(*w_ih, dwi));
                self.accumulate(grads, *w_hh, self.shaped(*w_hh, dwh));
                self.accumulate(grads, *b, self.shaped(*b, db));
            }
            Op::Softmax(x) => {
                let c = *out.shape().last().unwrap_or(&1);
                let mut dx = Vec::with_capacity(out.len());
                for (p, d) in out.data().chunks_exact(c).zip(g.data().chunks_exact(c)) {
                    let dot = p.iter().zip(d).fold(T::zero(), |s, (&pv, &dv)| s + pv * dv);
                    dx.extend(p.iter().zip(d).map(|(&pv, &dv)| pv * (dv - dot)));
                }
                self.accumulate(grads, *x, self.shaped(*x, dx));
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
                clamped,
                divisor,
            } => {
                let c = self.value(*logits).shape()[1];
                let scale = g.data()[0] / *divisor;
                let mut dx = vec![T::zero(); probs.len()];
                for (r, (&l, &cl)) in labels.iter().zip(clamped).enumerate() {
                    if cl {
                        continue;
                    }
                    let row = &mut dx[r * c..(r + 1) * c];
                    for (j, d) in row.iter_mut().enumerate() {
                        let y = if j == l { T::one() } else { T::zero() };
                        *d = (probs[r * c + j] - y) * scale;
                    }
                }
                self.accumulate(grads, *logits, self.shaped(*logits, dx));
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                let dx = vec![s; self.value(*x).len()];
                self.accumulate(grads, *x, self.shaped(*x, dx));
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
