//! Layer parameter types and single-example layer functions.

use crate::error::{Error, Result};
use crate::nn::kernels::{ConvGeometry, Padding};
use crate::nn::tape::{softmax_in_place, Tape};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Glorot-uniform initialisation: `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    let shape = shape.into();
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.uniform_in(-limit, limit))).collect();
    Tensor::from_vec(shape, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// `[outC, inC, fH, fW]`
    pub weight: Tensor<T>,
    /// `[outC]`
    pub bias: Tensor<T>,
    /// `(height, width)` padding.
    pub padding: (Padding, Padding),
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, padding: (Padding, Padding)) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 4 {
            return Err(Error::shape(format!("conv weight must be rank 4, got {ws:?}")));
        }
        if !(1..=2).contains(&ws[2]) {
            return Err(Error::config(format!("filter height {} not in {{1, 2}}", ws[2])));
        }
        if bias.shape() != [ws[0]] {
            return Err(Error::shape(format!(
                "conv bias {:?} for {} filters",
                bias.shape(),
                ws[0]
            )));
        }
        Ok(ConvParams {
            weight,
            bias,
            padding,
        })
    }

    pub fn init(
        out_c: usize,
        in_c: usize,
        (kh, kw): (usize, usize),
        padding: (Padding, Padding),
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = glorot_uniform([out_c, in_c, kh, kw], in_c * kh * kw, out_c * kh * kw, rng)?;
        Self::new(weight, Tensor::zeros([out_c])?, padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn geometry(&self, in_h: usize, in_w: usize) -> Option<ConvGeometry> {
        let (kh, kw) = self.kernel();
        ConvGeometry::new(
            (self.in_channels(), in_h, in_w),
            (self.out_channels(), kh, kw),
            self.padding,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    /// `[in, out]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::shape(format!(
                "dense weight {:?} with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(DenseParams { weight, bias })
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        let weight = glorot_uniform([inputs, outputs], inputs, outputs, rng)?;
        Self::new(weight, Tensor::zeros([outputs])?)
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// LSTM parameters; the `4U` gate rows are ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    /// `[4U, F]`
    pub w_ih: Tensor<T>,
    /// `[4U, U]`
    pub w_hh: Tensor<T>,
    /// `[4U]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> LstmParams<T> {
    pub fn new(w_ih: Tensor<T>, w_hh: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let wh = w_hh.shape();
        if wh.len() != 2 || wh[0] != 4 * wh[1] {
            return Err(Error::shape(format!("recurrent weights {wh:?} are not [4U, U]")));
        }
        let u = wh[1];
        if w_ih.rank() != 2 || w_ih.shape()[0] != 4 * u || bias.shape() != [4 * u] {
            return Err(Error::shape(format!(
                "lstm input weights {:?} / bias {:?} for {u} units",
                w_ih.shape(),
                bias.shape()
            )));
        }
        Ok(LstmParams { w_ih, w_hh, bias })
    }

    /// Glorot-uniform weights, zero biases except the forget gate at 1.
    pub fn init(features: usize, units: usize, rng: &mut Rng) -> Result<Self> {
        let w_ih = glorot_uniform([4 * units, features], features, 4 * units, rng)?;
        let w_hh = glorot_uniform([4 * units, units], units, 4 * units, rng)?;
        let mut bias = Tensor::zeros([4 * units])?;
        bias.data_mut()[units..2 * units].fill(T::one());
        Self::new(w_ih, w_hh, bias)
    }

    pub fn units(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.w_ih.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    /// Identity.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn batched<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    x.clone().reshape(shape)
}

fn unbatched<T: Scalar>(x: Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape()[1..].to_vec();
    x.reshape(shape)
}

/// Convolution of one `[inC, H, W]` map.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::shape(format!("conv2d expects [C, H, W], got {:?}", x.shape())));
    }
    let mut tape = Tape::new();
    let xv = tape.input(batched(x)?);
    let w = tape.input(p.weight.clone());
    let b = tape.input(p.bias.clone());
    let y = tape.conv2d(xv, w, b, p.padding)?;
    unbatched(tape.value(y).clone())
}

/// `x^T W + b` for one input vector.
pub fn dense<T: Scalar>(x: &Tensor<T>, p: &DenseParams<T>) -> Result<Tensor<T>> {
    if x.rank() != 1 || x.len() != p.inputs() {
        return Err(Error::shape(format!(
            "dense input {:?} for {} inputs",
            x.shape(),
            p.inputs()
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.input(batched(x)?);
    let w = tape.input(p.weight.clone());
    let b = tape.input(p.bias.clone());
    let y = tape.dense(xv, w, b)?;
    unbatched(tape.value(y).clone())
}

/// ReLU elementwise or softmax over the last axis.
pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Linear => x.clone(),
        Activation::Softmax => {
            let c = *x.shape().last().unwrap_or(&1);
            let mut out = x.clone();
            for row in out.data_mut().chunks_exact_mut(c) {
                softmax_in_place(row);
            }
            out
        }
    }
}

/// Inverted dropout of a single tensor.
pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let y = tape.dropout(xv, rate, (mode == Mode::Train).then_some(rng))?;
    Ok(tape.value(y).clone())
}

/// Final hidden state after running the cell over `seq` `[T, F]` from zero state.
pub fn lstm<T: Scalar>(seq: &Tensor<T>, p: &LstmParams<T>) -> Result<Tensor<T>> {
    if seq.rank() != 2 || seq.shape()[1] != p.features() {
        return Err(Error::shape(format!(
            "lstm sequence {:?} for {} features",
            seq.shape(),
            p.features()
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.input(batched(seq)?);
    let wi = tape.input(p.w_ih.clone());
    let wh = tape.input(p.w_hh.clone());
    let b = tape.input(p.bias.clone());
    let h = tape.lstm(xv, wi, wh, b)?;
    unbatched(tape.value(h).clone())
}
