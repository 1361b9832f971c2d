//! Instantiated networks: parameters plus the forward wiring of a spec.

use crate::arch::{ArchitectureSpec, Connectivity, Layout};
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvParams, DenseParams, LstmParams, Mode, ParamId, Tape, Var};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A built network. Parameters are held as a flat named list in the order
/// given by [`ArchitectureSpec::param_shapes`]; a parameter's position is its
/// [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: ArchitectureSpec,
    seed: u64,
    params: Vec<(String, Tensor<T>)>,
}

/// Tape handles of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub logits: Var,
    pub params: Vec<Var>,
    /// Output of every conv stage (after activation, shortcut and dropout).
    pub feature_maps: Vec<Var>,
}

impl<T: Scalar> Network<T> {
    /// Initialises every parameter from `seed`: Glorot-uniform weights, zero
    /// biases and a forget-gate bias of one.
    pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        let layout = spec.layout()?;
        let mut rng = Rng::new(seed);
        let mut params = Vec::new();
        for (i, (c, g)) in spec.conv.iter().zip(&layout.convs).enumerate() {
            let p = ConvParams::init(
                g.out_c,
                g.in_c,
                (g.kh, g.kw),
                (c.padding[0], c.padding[1]),
                &mut rng,
            )?;
            params.push((format!("conv{i}.weight"), p.weight));
            params.push((format!("conv{i}.bias"), p.bias));
        }
        for (i, s) in spec.shortcuts.iter().enumerate() {
            if s.projection {
                let (src, dst) = (&layout.convs[s.from], &layout.convs[s.to]);
                let p = ConvParams::init(
                    dst.out_c,
                    src.out_c,
                    (1, 1),
                    (crate::nn::Padding::Valid, crate::nn::Padding::Valid),
                    &mut rng,
                )?;
                params.push((format!("shortcut{i}.weight"), p.weight));
                params.push((format!("shortcut{i}.bias"), p.bias));
            }
        }
        if let Some(r) = spec.recurrent {
            let p = LstmParams::init(layout.trunk.0 * layout.trunk.1, r.units, &mut rng)?;
            params.push(("lstm.w_ih".into(), p.w_ih));
            params.push(("lstm.w_hh".into(), p.w_hh));
            params.push(("lstm.bias".into(), p.bias));
        }
        let mut inputs = layout.head_inputs;
        for (i, d) in spec.dense.iter().enumerate() {
            let p = DenseParams::init(inputs, d.units, &mut rng)?;
            params.push((format!("dense{i}.weight"), p.weight));
            params.push((format!("dense{i}.bias"), p.bias));
            inputs = d.units;
        }
        Ok(Network {
            spec: spec.clone(),
            seed,
            params,
        })
    }

    /// Reassembles a network from stored parameters, checking names and
    /// shapes against the spec.
    pub fn from_parts(spec: ArchitectureSpec, seed: u64, params: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        if shapes.len() != params.len() {
            return Err(Error::config(format!(
                "spec expects {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape), (pname, t)) in shapes.iter().zip(&params) {
            if name != pname || shape.as_slice() != t.shape() {
                return Err(Error::config(format!(
                    "parameter {pname} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Network { spec, seed, params })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.spec.dropout_rate = rate;
        Ok(())
    }

    pub fn lstm_params(&self) -> Option<LstmParams<T>> {
        let w_ih = self.param("lstm.w_ih")?.clone();
        let w_hh = self.param("lstm.w_hh")?.clone();
        let bias = self.param("lstm.bias")?.clone();
        LstmParams::new(w_ih, w_hh, bias).ok()
    }

    pub fn conv_params(&self, layer: usize) -> Option<ConvParams<T>> {
        let c = self.spec.conv.get(layer)?;
        ConvParams::new(
            self.param(&format!("conv{layer}.weight"))?.clone(),
            self.param(&format!("conv{layer}.bias"))?.clone(),
            (c.padding[0], c.padding[1]),
        )
        .ok()
    }

    /// Same network with parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            seed: self.seed,
            params: self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    fn layout(&self) -> Layout {
        self.spec.layout().expect("network spec validated at construction")
    }

    /// Records a forward pass over `frames` (`[B, H, W]`) and returns the
    /// logits handle. Dropout is active iff `dropout_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        frames: Tensor<T>,
        mut dropout_rng: Option<&mut Rng>,
    ) -> Result<ForwardVars> {
        let [h, w] = self.spec.input;
        let s = frames.shape().to_vec();
        if s.len() != 3 || s[1] != h || s[2] != w {
            return Err(Error::shape(format!(
                "expected frames [B, {h}, {w}], got {s:?}"
            )));
        }
        let layout = self.layout();
        let rate = self.spec.dropout_rate;
        let params: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, (_, t))| tape.param(ParamId(i), t.clone()))
            .collect();
        let mut next = 0;
        let mut take = || {
            let v = params[next];
            next += 1;
            v
        };

        let x0 = tape.input(frames.reshape([s[0], 1, h, w])?);
        let mut outs: Vec<Var> = Vec::with_capacity(self.spec.conv.len());
        let conv_params: Vec<(Var, Var)> = self.spec.conv.iter().map(|_| (take(), take())).collect();
        let shortcut_params: Vec<Option<(Var, Var)>> = self
            .spec
            .shortcuts
            .iter()
            .map(|s| s.projection.then(|| (take(), take())))
            .collect();
        let lstm_params = self.spec.recurrent.map(|_| (take(), take(), take()));
        let dense_params: Vec<(Var, Var)> = self.spec.dense.iter().map(|_| (take(), take())).collect();

        for (i, c) in self.spec.conv.iter().enumerate() {
            let input = match self.spec.connectivity {
                Connectivity::Sequential => outs.last().copied().unwrap_or(x0),
                Connectivity::DenselyConnected => {
                    if outs.is_empty() {
                        x0
                    } else {
                        let mut parts = vec![x0];
                        parts.extend_from_slice(&outs);
                        tape.concat_channels(&parts)?
                    }
                }
            };
            let (wv, bv) = conv_params[i];
            let mut a = tape.conv2d(input, wv, bv, (c.padding[0], c.padding[1]))?;
            if c.activation == Activation::Relu {
                a = tape.relu(a);
            }
            for (j, sc) in self.spec.shortcuts.iter().enumerate() {
                if sc.to != i {
                    continue;
                }
                let src = outs[sc.from];
                let skip = match shortcut_params[j] {
                    Some((pw, pb)) => tape.conv2d(
                        src,
                        pw,
                        pb,
                        (crate::nn::Padding::Valid, crate::nn::Padding::Valid),
                    )?,
                    None => src,
                };
                a = tape.add(a, skip)?;
            }
            if c.dropout {
                a = tape.dropout(a, rate, dropout_rng.as_deref_mut())?;
            }
            outs.push(a);
        }
        debug_assert_eq!(outs.len(), layout.convs.len());
        let trunk = outs.last().copied().unwrap_or(x0);

        let mut x = match lstm_params {
            Some((wi, wh, b)) => {
                let seq = tape.to_sequence(trunk)?;
                tape.lstm(seq, wi, wh, b)?
            }
            None => tape.flatten(trunk),
        };
        let last = self.spec.dense.len() - 1;
        for (i, d) in self.spec.dense.iter().enumerate() {
            let (wv, bv) = dense_params[i];
            x = tape.dense(x, wv, bv)?;
            if i == last {
                break;
            }
            if d.activation == Activation::Relu {
                x = tape.relu(x);
            }
            if d.dropout {
                x = tape.dropout(x, rate, dropout_rng.as_deref_mut())?;
            }
        }
        Ok(ForwardVars {
            logits: x,
            params,
            feature_maps: outs,
        })
    }

    /// Class probabilities `[B, C]` in evaluation mode.
    pub fn predict_proba(&self, frames: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let fv = self.forward(&mut tape, frames, None)?;
        let p = tape.softmax(fv.logits);
        Ok(tape.value(p).clone())
    }

    /// Probability vector for one `[H, W]` frame.
    pub fn forward_classify(&self, frame: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        let [h, w] = self.spec.input;
        if frame.shape() != [h, w] {
            return Err(Error::shape(format!(
                "expected a [{h}, {w}] frame, got {:?}",
                frame.shape()
            )));
        }
        let mut tape = Tape::new();
        let batch = frame.clone().reshape([1, h, w])?;
        let fv = self.forward(&mut tape, batch, (mode == Mode::Train).then_some(rng))?;
        let p = tape.softmax(fv.logits);
        tape.value(p).clone().reshape([self.spec.num_classes])
    }

    /// Conv-stage outputs for one frame in evaluation mode.
    pub fn feature_maps(&self, frame: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let [h, w] = self.spec.input;
        let mut tape = Tape::new();
        let fv = self.forward(&mut tape, frame.clone().reshape([1, h, w])?, None)?;
        fv.feature_maps
            .iter()
            .map(|&v| {
                let t = tape.value(v).clone();
                let s = t.shape()[1..].to_vec();
                t.reshape(s)
            })
            .collect()
    }

    /// Summed cross-entropy of a batch divided by `divisor`, with parameter
    /// gradients in parameter order.
    pub fn loss_and_gradients(
        &self,
        frames: Tensor<T>,
        labels: &[usize],
        divisor: f64,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<(T, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let fv = self.forward(&mut tape, frames, dropout_rng)?;
        let loss = tape.softmax_cross_entropy(fv.logits, labels, divisor)?;
        let value = tape.value(loss).item()?;
        let mut grads = tape.backward(loss)?.into_param_map();
        let grads = (0..self.params.len())
            .map(|i| {
                grads
                    .remove(&ParamId(i))
                    .ok_or_else(|| Error::contract(format!("missing gradient for parameter {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((value, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchId;

    #[test]
    fn build_is_deterministic() {
        let spec = ArchitectureSpec::preset(ArchId::Cnn2, 10, 0.6).unwrap();
        let a = Network::<f32>::build(&spec, 17).unwrap();
        let b = Network::<f32>::build(&spec, 17).unwrap();
        assert_eq!(a, b);
        let c = Network::<f32>::build(&spec, 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cldnn_has_single_lstm() {
        let spec = ArchitectureSpec::preset(ArchId::Cldnn, 10, 0.6).unwrap();
        let net = Network::<f32>::build(&spec, 1).unwrap();
        assert_eq!(net.lstm_params().unwrap().units(), 50);
        assert_eq!(net.params().iter().filter(|(n, _)| n.starts_with("lstm.")).count(), 3);
    }

    #[test]
    fn param_count_matches_spec() {
        for id in ArchId::PRESETS {
            let spec = ArchitectureSpec::preset(id, 10, 0.6).unwrap();
            let net = Network::<f32>::build(&spec.clone().scaled(0.05), 1).unwrap();
            assert_eq!(net.param_count(), crate::arch::param_count(net.spec()).unwrap());
        }
    }

    #[test]
    fn wrong_frame_shape() {
        let spec = ArchitectureSpec::preset(ArchId::Cnn2, 10, 0.6).unwrap().scaled(0.05);
        let net = Network::<f32>::build(&spec, 1).unwrap();
        let mut rng = Rng::new(0);
        let bad = Tensor::zeros([2, 64]).unwrap();
        assert!(matches!(net.forward_classify(&bad, Mode::Eval, &mut rng), Err(Error::Shape(_))));
    }
}
