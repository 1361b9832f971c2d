//! Finite-difference verification of every layer and every preset
//! architecture, in f64.

use crate::arch::{ArchId, ArchitectureSpec};
use crate::error::Result;
use crate::network::Network;
use crate::nn::{gradient_check, Padding, ParamId, Tape, Var, DEFAULT_EPS};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Worst relative error of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    /// Parameter tensor holding the worst coordinate.
    pub worst_tensor: String,
    pub checked: usize,
}

/// Coordinates checked per tensor; larger tensors are sampled.
const MAX_COORDS: usize = 24;

fn random(shape: &[usize], rng: &mut Rng, scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.normal() * scale).collect();
    Tensor::from_vec(shape.to_vec(), v).expect("shape")
}

/// Values bounded away from zero so relu kinks stay out of reach of the
/// finite-difference step.
fn off_zero(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    random(shape, rng, 1.0).map(|v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v })
}

fn coords(len: usize, rng: &mut Rng) -> Vec<usize> {
    if len <= MAX_COORDS {
        return (0..len).collect();
    }
    let mut all: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut all);
    all.truncate(MAX_COORDS);
    all.sort_unstable();
    all
}

/// Checks `build` (parameters -> scalar loss) against its tape gradient for
/// every tensor in `params`.
fn check_graph<F>(name: &str, names: &[&str], params: Vec<Tensor<f64>>, rng: &mut Rng, build: F) -> Result<SuiteEntry>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<(Tape<f64>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().enumerate().map(|(i, t)| tape.param(ParamId(i), t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok((tape, loss))
    };
    let (tape, loss) = eval(&params)?;
    let grads = tape.backward(loss)?;
    let mut entry = SuiteEntry {
        name: name.to_string(),
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
    };
    for i in 0..params.len() {
        let analytic = grads.param(ParamId(i)).expect("parameter gradient").clone();
        let cs = coords(params[i].len(), rng);
        let r = gradient_check(
            |theta| {
                let mut ps = params.clone();
                ps[i] = theta.clone();
                let (t, l) = eval(&ps)?;
                t.value(l).item()
            },
            &params[i],
            &analytic,
            DEFAULT_EPS,
            Some(&cs),
        )?;
        entry.checked += r.checked;
        if r.max_rel_error >= entry.max_rel_error {
            entry.max_rel_error = r.max_rel_error;
            entry.worst_tensor = names[i].to_string();
        }
    }
    Ok(entry)
}

/// `sum(y * r)` for a fixed random `r`, so every output element carries a
/// distinct upstream gradient.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let r = tape.leaf(random(&shape, &mut Rng::new(seed), 1.0));
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn layer_cases(rng: &mut Rng) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let x = random(&[3, 5], rng, 1.0);
    let w = random(&[5, 4], rng, 0.5);
    let b = random(&[4], rng, 0.1);
    out.push(check_graph("dense", &["x", "weight", "bias"], vec![x, w, b], rng, |t, v| {
        let y = t.dense(v[0], v[1], v[2])?;
        project(t, y, 1)
    })?);

    let x = off_zero(&[2, 3, 4], rng);
    out.push(check_graph("relu", &["x"], vec![x], rng, |t, v| {
        let y = t.relu(v[0]);
        project(t, y, 2)
    })?);

    for (label, kh, pads) in [
        ("conv2d 2x3 valid/same", 2, (Padding::Valid, Padding::Same)),
        ("conv2d 1x3 same/same", 1, (Padding::Same, Padding::Same)),
        ("conv2d 2x3 same/valid", 2, (Padding::Same, Padding::Valid)),
    ] {
        let x = random(&[2, 3, 2, 7], rng, 1.0);
        let w = random(&[4, 3, kh, 3], rng, 0.5);
        let b = random(&[4], rng, 0.1);
        out.push(check_graph(label, &["x", "weight", "bias"], vec![x, w, b], rng, move |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], pads)?;
            project(t, y, 3)
        })?);
    }

    let x = random(&[2, 10], rng, 1.0);
    out.push(check_graph("dropout (fixed mask)", &["x"], vec![x], rng, |t, v| {
        let mut mask_rng = Rng::new(77);
        let y = t.dropout(v[0], 0.6, Some(&mut mask_rng))?;
        project(t, y, 4)
    })?);

    let x = random(&[2, 3, 2, 5], rng, 1.0);
    out.push(check_graph("flatten", &["x"], vec![x], rng, |t, v| {
        let y = t.flatten(v[0]);
        project(t, y, 5)
    })?);

    let x = random(&[2, 3, 2, 5], rng, 1.0);
    out.push(check_graph("to_sequence", &["x"], vec![x], rng, |t, v| {
        let y = t.to_sequence(v[0])?;
        project(t, y, 6)
    })?);

    let a = random(&[2, 2, 1, 4], rng, 1.0);
    let c = random(&[2, 3, 1, 4], rng, 1.0);
    out.push(check_graph("concat_channels", &["a", "b"], vec![a, c], rng, |t, v| {
        let y = t.concat_channels(&[v[0], v[1], v[0]])?;
        project(t, y, 7)
    })?);

    let a = random(&[2, 6], rng, 1.0);
    let c = random(&[2, 6], rng, 1.0);
    out.push(check_graph("add", &["a", "b"], vec![a, c], rng, |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, 8)
    })?);

    let (units, feats) = (5, 3);
    let x = random(&[2, 6, feats], rng, 1.0);
    let wi = random(&[4 * units, feats], rng, 0.5);
    let wh = random(&[4 * units, units], rng, 0.5);
    let b = random(&[4 * units], rng, 0.2);
    out.push(check_graph("lstm", &["x", "w_ih", "w_hh", "bias"], vec![x, wi, wh, b], rng, |t, v| {
        let y = t.lstm(v[0], v[1], v[2], v[3])?;
        project(t, y, 9)
    })?);

    let z = random(&[3, 6], rng, 1.0);
    out.push(check_graph("softmax", &["logits"], vec![z], rng, |t, v| {
        let y = t.softmax(v[0]);
        project(t, y, 10)
    })?);

    let z = random(&[4, 6], rng, 1.0);
    out.push(check_graph("softmax cross-entropy", &["logits"], vec![z], rng, |t, v| {
        t.softmax_cross_entropy(v[0], &[0, 5, 2, 2], 4.0)
    })?);
    Ok(out)
}

/// Preset scaled to a few filters per layer on `2 x 16` frames.
pub fn small_preset(arch: ArchId) -> Result<ArchitectureSpec> {
    Ok(ArchitectureSpec::preset(arch, 4, 0.5)?.scaled(0.02).with_input(2, 16))
}

fn arch_case(arch: ArchId, rng: &mut Rng) -> Result<SuiteEntry> {
    let spec = small_preset(arch)?;
    let mut net = Network::<f64>::build(&spec, rng.word())?;
    // Zero biases put relu inputs exactly on the kink wherever dropout
    // clears a whole receptive field; move them off it.
    for (name, p) in net.params_mut() {
        if name.ends_with("bias") {
            *p = random(p.shape(), rng, 0.1);
        }
    }
    let frames = random(&[3, 2, 16], rng, 1.0);
    let labels = [0usize, 3, 1];
    let drop_seed = rng.word();
    let loss_of = |n: &Network<f64>| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut mask = Rng::new(drop_seed);
        n.loss_and_gradients(frames.clone(), &labels, 3.0, Some(&mut mask))
    };
    let (_, grads) = loss_of(&net)?;
    let mut entry = SuiteEntry {
        name: format!("{} (full network)", arch.name()),
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
    };
    for (i, (name, p)) in net.params().iter().enumerate() {
        let cs = coords(p.len(), rng);
        let r = gradient_check(
            |theta| {
                let mut n = net.clone();
                n.params_mut()[i].1 = theta.clone();
                Ok(loss_of(&n)?.0)
            },
            p,
            &grads[i],
            DEFAULT_EPS,
            Some(&cs),
        )?;
        entry.checked += r.checked;
        if r.max_rel_error >= entry.max_rel_error {
            entry.max_rel_error = r.max_rel_error;
            entry.worst_tensor = name.clone();
        }
    }
    Ok(entry)
}

/// Every layer case followed by every preset architecture.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = Rng::new(seed);
    let mut out = layer_cases(&mut rng)?;
    for arch in ArchId::PRESETS {
        out.push(arch_case(arch, &mut rng)?);
    }
    Ok(out)
}
