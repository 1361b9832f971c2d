//! Layers checked against direct, independently written computations.

use modrec_core::nn::{conv2d, lstm, ConvParams, LstmParams, Padding};
use modrec_core::train::{adam_step, cross_entropy, AdamState};
use modrec_core::{Rng, Tensor, TrainConfig};

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Cross-correlation written out with explicit zero padding.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, pads: (Padding, Padding)) -> Vec<f64> {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (pt, pb) = pads.0.amounts(kh);
    let (pl, pr) = pads.1.amounts(kw);
    let (oh, ow) = (h + pt + pb - kh + 1, wd + pl + pr - kw + 1);
    let at = |ci: usize, r: isize, s: isize| -> f64 {
        if r < 0 || s < 0 || r >= h as isize || s >= wd as isize {
            0.0
        } else {
            x.get(&[ci, r as usize, s as usize]).unwrap()
        }
    };
    let mut out = Vec::with_capacity(o * oh * ow);
    for oc in 0..o {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b.data()[oc];
                for ci in 0..c {
                    for u in 0..kh {
                        for v in 0..kw {
                            let r = (i + u) as isize - pt as isize;
                            let s = (j + v) as isize - pl as isize;
                            acc += w.get(&[oc, ci, u, v]).unwrap() * at(ci, r, s);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_direct_summation() {
    let mut rng = Rng::new(2024);
    let pad = |r: &mut Rng| if r.bit() { Padding::Same } else { Padding::Valid };
    let mut cases = 0;
    while cases < 200 {
        let (c, o) = (1 + rng.below(4), 1 + rng.below(4));
        let (h, w) = (1 + rng.below(2), 1 + rng.below(8));
        let (kh, kw) = (1 + rng.below(2), 1 + rng.below(3));
        let pads = (pad(&mut rng), pad(&mut rng));
        let x = randn(&[c, h, w], &mut rng);
        let p = ConvParams::new(randn(&[o, c, kh, kw], &mut rng), randn(&[o], &mut rng), pads).unwrap();
        if p.geometry(h, w).is_none() {
            assert!(conv2d(&x, &p).is_err());
            continue;
        }
        let got = conv2d(&x, &p).unwrap();
        let want = naive_conv(&x, &p.weight, &p.bias, pads);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6, "case {cases}: {a} vs {b}");
        }
        cases += 1;
    }
}

#[test]
fn conv2d_f32_agrees_with_f64() {
    let mut rng = Rng::new(5);
    let x = randn(&[3, 2, 8], &mut rng);
    let p = ConvParams::new(randn(&[4, 3, 2, 3], &mut rng), randn(&[4], &mut rng), (Padding::Valid, Padding::Same)).unwrap();
    let p32 = ConvParams::new(p.weight.cast::<f32>(), p.bias.cast::<f32>(), p.padding).unwrap();
    let a = conv2d(&x, &p).unwrap();
    let b = conv2d(&x.cast::<f32>(), &p32).unwrap().cast::<f64>();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-5);
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One cell update from state `(h, c)`, gates ordered input, forget,
/// candidate, output.
fn cell(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams<f64>) -> (Vec<f64>, Vec<f64>) {
    let u = h.len();
    let f = x.len();
    let z: Vec<f64> = (0..4 * u)
        .map(|r| {
            let mut s = p.bias.data()[r];
            for k in 0..f {
                s += p.w_ih.data()[r * f + k] * x[k];
            }
            for k in 0..u {
                s += p.w_hh.data()[r * u + k] * h[k];
            }
            s
        })
        .collect();
    let mut h2 = vec![0.0; u];
    let mut c2 = vec![0.0; u];
    for k in 0..u {
        let i = sigmoid(z[k]);
        let fg = sigmoid(z[u + k]);
        let g = z[2 * u + k].tanh();
        let o = sigmoid(z[3 * u + k]);
        c2[k] = fg * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

#[test]
fn lstm_single_step_matches_hand_cell() {
    let mut rng = Rng::new(11);
    let (f, u) = (3, 4);
    let p = LstmParams::new(randn(&[4 * u, f], &mut rng), randn(&[4 * u, u], &mut rng), randn(&[4 * u], &mut rng)).unwrap();
    let x = randn(&[1, f], &mut rng);
    let got = lstm(&x, &p).unwrap();
    let (want, _) = cell(x.data(), &vec![0.0; u], &vec![0.0; u], &p);
    for (a, b) in got.data().iter().zip(&want) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn lstm_five_steps_match_hand_recurrence() {
    let mut rng = Rng::new(12);
    let (f, u, t) = (2, 3, 5);
    let p = LstmParams::new(randn(&[4 * u, f], &mut rng), randn(&[4 * u, u], &mut rng), randn(&[4 * u], &mut rng)).unwrap();
    let x = randn(&[t, f], &mut rng);
    let (mut h, mut c) = (vec![0.0; u], vec![0.0; u]);
    for s in 0..t {
        (h, c) = cell(&x.data()[s * f..(s + 1) * f], &h, &c, &p);
    }
    let got = lstm(&x, &p).unwrap();
    for (a, b) in got.data().iter().zip(&h) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = Rng::new(3);
    for _ in 0..200 {
        let (m, k, n) = (1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(8));
        let a = randn(&[m, k], &mut rng).cast::<f32>();
        let b = randn(&[k, n], &mut rng).cast::<f32>();
        let got = a.matmul(&b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let mut s = 0f32;
                for q in 0..k {
                    s += a.data()[i * k + q] * b.data()[q * n + j];
                }
                assert!((got.data()[i * n + j] - s).abs() <= 1e-5);
            }
        }
    }
}

#[test]
fn analytic_fixtures() {
    let p = modrec_core::nn::activation(&Tensor::<f64>::from_f64([2], &[0.0, 0.0]).unwrap(), modrec_core::nn::Activation::Softmax);
    assert_eq!(p.data(), &[0.5, 0.5]);

    let uniform = Tensor::<f64>::full([10], 0.1).unwrap();
    assert!((cross_entropy(&uniform, 3).unwrap() - 10f64.ln()).abs() < 1e-6);

    let zero = LstmParams::new(
        Tensor::<f64>::zeros([20, 3]).unwrap(),
        Tensor::zeros([20, 5]).unwrap(),
        Tensor::zeros([20]).unwrap(),
    )
    .unwrap();
    let h = lstm(&Tensor::from_f64([4, 3], &[0.3; 12]).unwrap(), &zero).unwrap();
    assert!(h.data().iter().all(|&v| v == 0.0));

    let cfg = TrainConfig::default();
    for g in [2.0, -0.5, 0.05, 1e3] {
        let mut theta = Tensor::<f64>::scalar(1.0);
        let mut st = AdamState::new([&theta]);
        adam_step([&mut theta], &[Tensor::scalar(g)], &mut st, &cfg).unwrap();
        let step = (1.0 - theta.item().unwrap()).abs();
        assert!((step - cfg.learning_rate).abs() <= 1e-9, "g={g}: {step}");
    }
}
