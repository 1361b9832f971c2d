//! Mini-batch Adam training with early stopping on validation loss.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::DEFAULT_DROPOUT;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::nn::PROB_FLOOR;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Validation loss must drop by at least this much to count as progress.
pub const MIN_IMPROVEMENT: f64 = 1e-5;

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dropout: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Examples per forward/backward pass. Gradients of the chunks of one
    /// batch are summed in order, so this only trades memory for speed.
    pub chunk_size: usize,
    /// Print one line per epoch to standard error.
    pub progress: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout: DEFAULT_DROPOUT,
            patience: 20,
            max_epochs: 100,
            seed: 0,
            chunk_size: 64,
            progress: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size < 1 || self.chunk_size < 1 {
            return bad("batch and chunk sizes must be at least 1");
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("need learning_rate > 0 and betas in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

/// `-ln(max(probs[label], 1e-12))`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, label: usize) -> Result<f64> {
    let p = probs
        .data()
        .get(label)
        .ok_or_else(|| Error::Index(format!("label {label} out of range for {} classes", probs.len())))?;
    Ok(-p.as_f64().max(PROB_FLOOR).ln())
}

/// Adam moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| p.map(|_| T::zero())).collect();
        AdamState { v: m.clone(), m, t: 0 }
    }
}

/// One bias-corrected Adam update. Parameters are untouched when any
/// gradient is non-finite.
pub fn adam_step<'a, T: Scalar + 'a>(
    params: impl IntoIterator<Item = &'a mut Tensor<T>>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(Error::shape(format!(
            "{} gradients for {} optimizer slots",
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
        return Err(Error::Numerics(format!("non-finite gradient in parameter {i}")));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (ob1, ob2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let (c1, c2, lr, eps) = (T::lit(c1), T::lit(c2), T::lit(cfg.learning_rate), T::lit(cfg.epsilon));
    let mut n = 0;
    for (i, p) in params.into_iter().enumerate() {
        let g = &grads[i];
        if p.shape() != g.shape() || state.m[i].shape() != g.shape() {
            return Err(Error::shape(format!(
                "parameter {i}: value {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (((x, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + ob1 * g;
            *v = b2 * *v + ob2 * g * g;
            *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        n += 1;
    }
    if n != grads.len() {
        return Err(Error::shape(format!("{n} parameters for {} gradients", grads.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// Patience bookkeeping over a stream of validation losses.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epochs: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epochs: 0,
            stale: 0,
        }
    }

    /// Records one epoch; returns whether it is the new best. An epoch
    /// improves when its loss is below the best so far by at least
    /// [`MIN_IMPROVEMENT`] (the first finite loss always does).
    pub fn observe(&mut self, val_loss: f64) -> bool {
        self.epochs += 1;
        let improved = if self.best.is_finite() {
            val_loss <= self.best - MIN_IMPROVEMENT
        } else {
            val_loss < self.best
        };
        if improved {
            self.best = val_loss;
            self.best_epoch = self.epochs;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    /// 1-based epoch of the best loss, 0 before any improvement.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based index into `epochs` of the restored parameters.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.checked_sub(1).and_then(|i| self.epochs.get(i))
    }

    /// Same records with wall-clock seconds zeroed, for determinism checks.
    pub fn without_timing(&self) -> TrainHistory {
        let mut h = self.clone();
        for e in &mut h.epochs {
            e.seconds = 0.0;
        }
        h
    }

    pub fn to_csv(&self) -> Result<String> {
        if self.epochs.is_empty() {
            return Err(Error::contract("cannot export an empty history"));
        }
        let mut s = String::from("epoch,train_loss,val_loss,val_acc,seconds\n");
        for e in &self.epochs {
            writeln!(
                s,
                "{},{:.9e},{:.9e},{:.9e},{:.6}",
                e.epoch, e.train_loss, e.val_loss, e.val_acc, e.seconds
            )
            .unwrap();
        }
        Ok(s)
    }
}

pub fn export_history(h: &TrainHistory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, h.to_csv()?).map_err(|e| Error::io(path, e))
}

/// Mean cross-entropy and accuracy of `net` on `data` with dropout off.
pub fn evaluate_loss<T: Scalar>(net: &Network<T>, data: &Dataset, chunk: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty dataset"));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let parts = idx
        .par_chunks(chunk.max(1))
        .map(|c| {
            let probs = net.predict_proba(data.frames(c))?;
            let classes = net.num_classes();
            let mut loss = 0.0;
            let mut hits = 0usize;
            for (row, &label) in probs.data().chunks_exact(classes).zip(&data.labels(c)) {
                loss += -row[label].as_f64().max(PROB_FLOOR).ln();
                hits += (argmax(row) == label) as usize;
            }
            Ok((loss, hits))
        })
        .collect::<Result<Vec<_>>>()?;
    let (loss, hits) = parts.iter().fold((0.0, 0), |(l, h), &(a, b)| (l + a, h + b));
    Ok((loss / data.len() as f64, hits as f64 / data.len() as f64))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains against `val`, restoring the parameters of the best epoch.
pub fn train<T: Scalar>(
    net: Network<T>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Network<T>, TrainHistory)> {
    if val.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    let chunk = cfg.chunk_size;
    train_with(net, train, cfg, |n| evaluate_loss(n, val, chunk))
}

/// Training loop with a caller-supplied validation step returning
/// `(loss, accuracy)`.
pub fn train_with<T: Scalar, V>(
    mut net: Network<T>,
    train: &Dataset,
    cfg: &TrainConfig,
    mut validate: V,
) -> Result<(Network<T>, TrainHistory)>
where
    V: FnMut(&Network<T>) -> Result<(f64, f64)>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    if train.num_classes() != net.num_classes() {
        return Err(Error::config(format!(
            "network has {} outputs but the data has {} classes",
            net.num_classes(),
            train.num_classes()
        )));
    }
    net.set_dropout_rate(cfg.dropout)?;
    let root = Rng::new(cfg.seed);
    let mut adam = AdamState::new(net.params().iter().map(|(_, t)| t));
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = net.clone();
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    let stop_reason = loop {
        let epoch = records.len() + 1;
        let started = Instant::now();
        root.split(SHUFFLE_STREAM).split(epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let drop_rng = root.split(DROPOUT_STREAM).split(step);
            let (loss, grads) = batch_gradients(&net, train, batch, cfg.chunk_size, &drop_rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerics(format!("epoch {epoch}: training loss is not finite")));
            }
            adam_step(net.params_mut().iter_mut().map(|(_, t)| t), &grads, &mut adam, cfg)
                .map_err(|e| match e {
                    Error::Numerics(m) => Error::Numerics(format!("epoch {epoch}: {m}")),
                    e => e,
                })?;
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        let (val_loss, val_acc) = validate(&net)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerics(format!("epoch {epoch}: validation loss is not finite")));
        }
        if stopper.observe(val_loss) {
            best = net.clone();
        }
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        };
        if cfg.progress {
            eprintln!(
                "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}  {:.1}s",
                rec.epoch, rec.train_loss, rec.val_loss, rec.val_acc, rec.seconds
            );
        }
        records.push(rec);
        if stopper.should_stop() {
            break StopReason::Patience;
        }
        if records.len() >= cfg.max_epochs {
            break StopReason::MaxEpochs;
        }
    };
    Ok((
        best,
        TrainHistory {
            epochs: records,
            best_epoch: stopper.best_epoch(),
            stop_reason,
        },
    ))
}

/// Mean loss and gradient over `batch`, computed chunk by chunk in parallel
/// and summed in chunk order.
fn batch_gradients<T: Scalar>(
    net: &Network<T>,
    data: &Dataset,
    batch: &[usize],
    chunk: usize,
    drop_rng: &Rng,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let divisor = batch.len() as f64;
    let parts = batch
        .par_chunks(chunk)
        .enumerate()
        .map(|(k, c)| {
            let mut rng = drop_rng.split(k as u64);
            net.loss_and_gradients(data.frames(c), &data.labels(c), divisor, Some(&mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = parts.into_iter();
    let (loss, mut grads) = it.next().expect("non-empty batch");
    let mut loss = loss.as_f64();
    for (l, g) in it {
        loss += l.as_f64();
        for (acc, part) in grads.iter_mut().zip(&g) {
            acc.add_assign(part)?;
        }
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cross_entropy_fixtures() {
        let u = Tensor::<f64>::full([10], 0.1).unwrap();
        assert!(close(cross_entropy(&u, 7).unwrap(), 10f64.ln(), 1e-12));
        let one = Tensor::<f64>::from_f64([3], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&one, 1).unwrap(), 0.0);
        assert!(close(cross_entropy(&one, 0).unwrap(), 27.631021115928547, 1e-9));
        assert!(matches!(cross_entropy(&one, 3), Err(Error::Index(_))));
    }

    fn scalar_step(g: f64) -> f64 {
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        let mut st = AdamState::new(&p);
        adam_step(p.iter_mut(), &[Tensor::scalar(g)], &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(st.t, 1);
        p[0].item().unwrap()
    }

    #[test]
    fn adam_first_step() {
        // m̂ = 2, v̂ = 4, step = -α·2/(2 + ε)
        assert!(close(scalar_step(2.0), -1e-3 * 2.0 / (2.0 + 1e-8), 1e-15));
        assert_eq!(scalar_step(0.0), 0.0);
        for g in [0.01, -3.0, 250.0] {
            assert!(close(scalar_step(g).abs(), 1e-3, 1e-9), "{g}");
        }
        // with |g| near ε the step shrinks to α|g|/(|g| + ε)
        assert!(close(scalar_step(1e-6).abs(), 1e-3 * 1e-6 / (1e-6 + 1e-8), 1e-15));
    }

    #[test]
    fn adam_rejects_nan() {
        let mut p = vec![Tensor::<f64>::scalar(1.0)];
        let mut st = AdamState::new(&p);
        let r = adam_step(p.iter_mut(), &[Tensor::scalar(f64::NAN)], &mut st, &TrainConfig::default());
        assert!(matches!(r, Err(Error::Numerics(_))));
        assert_eq!(p[0].item().unwrap(), 1.0);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn patience_walkthrough() {
        let mut s = EarlyStopping::new(2);
        let mut stopped_at = None;
        for (i, l) in [1.0, 0.9, 0.95, 0.93].into_iter().enumerate() {
            s.observe(l);
            if s.should_stop() {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(4));
        assert_eq!(s.best_epoch(), 2);
    }

    #[test]
    fn tiny_gain_is_not_improvement() {
        let mut s = EarlyStopping::new(1);
        assert!(s.observe(1.0));
        assert!(!s.observe(1.0 - 5e-6));
        assert!(s.should_stop());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { dropout: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    fn history(n: usize) -> TrainHistory {
        TrainHistory {
            epochs: (1..=n)
                .map(|e| EpochRecord {
                    epoch: e,
                    train_loss: 1.0 / e as f64,
                    val_loss: 2.0 / e as f64,
                    val_acc: 0.1 * e as f64,
                    seconds: 0.5,
                })
                .collect(),
            best_epoch: n,
            stop_reason: StopReason::MaxEpochs,
        }
    }

    #[test]
    fn history_csv() {
        let csv = history(3).to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "epoch,train_loss,val_loss,val_acc,seconds");
        let f: Vec<f64> = lines[3].split(',').map(|x| x.parse().unwrap()).collect();
        assert!(close(f[2], 2.0 / 3.0, 1e-9));
        assert!(matches!(history(0).to_csv(), Err(Error::Contract(_))));
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5f32]), 1);
        assert_eq!(argmax(&[1.0f64]), 0);
    }
}
