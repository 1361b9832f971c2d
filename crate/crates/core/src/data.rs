//! Labeled IQ frames and the stratified train/validation/test split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arch::{FRAME_HEIGHT, FRAME_LEN};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One `[2, 128]` frame: row 0 holds I, row 1 holds Q.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub iq: Tensor<f32>,
    pub class: usize,
    pub snr: i32,
}

impl LabeledExample {
    pub fn new(iq: Tensor<f32>, class: usize, snr: i32) -> Result<Self> {
        if iq.shape() != [FRAME_HEIGHT, FRAME_LEN] {
            return Err(Error::shape(format!(
                "frame must be [{FRAME_HEIGHT}, {FRAME_LEN}], got {:?}",
                iq.shape()
            )));
        }
        Ok(LabeledExample { iq, class, snr })
    }

    /// Mean of `I² + Q²` over the frame.
    pub fn mean_power(&self) -> f64 {
        let d = self.iq.data();
        let (i, q) = d.split_at(FRAME_LEN);
        i.iter().zip(q).map(|(&a, &b)| (a as f64).powi(2) + (b as f64).powi(2)).sum::<f64>() / FRAME_LEN as f64
    }

    fn bits_eq(&self, other: &Self) -> bool {
        self.class == other.class
            && self.snr == other.snr
            && self.iq.shape() == other.iq.shape()
            && self.iq.data().iter().zip(other.iq.data()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// How a dataset came about. Not stored in the dataset file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub profile: Option<String>,
}

/// Ordered examples plus the class-name table. Equality compares classes
/// and examples bit for bit and ignores provenance.
#[derive(Debug, Clone)]
pub struct Dataset {
    classes: Vec<String>,
    examples: Vec<LabeledExample>,
    pub provenance: Provenance,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.classes == other.classes
            && self.examples.len() == other.examples.len()
            && self.examples.iter().zip(&other.examples).all(|(a, b)| a.bits_eq(b))
    }
}

impl Dataset {
    pub fn new(classes: Vec<String>, examples: Vec<LabeledExample>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::config("dataset needs at least one class"));
        }
        if let Some((i, e)) = examples.iter().enumerate().find(|(_, e)| e.class >= classes.len()) {
            return Err(Error::Index(format!(
                "example {i} has class {} but only {} classes exist",
                e.class,
                classes.len()
            )));
        }
        Ok(Dataset {
            classes,
            examples,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Example count per `(class, snr)` cell.
    pub fn cell_counts(&self) -> BTreeMap<(usize, i32), usize> {
        let mut m = BTreeMap::new();
        for e in &self.examples {
            *m.entry((e.class, e.snr)).or_insert(0) += 1;
        }
        m
    }

    /// Distinct SNR labels, ascending.
    pub fn snrs(&self) -> Vec<i32> {
        let mut s: Vec<i32> = self.examples.iter().map(|e| e.snr).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            classes: self.classes.clone(),
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Only the examples whose SNR label satisfies `keep`.
    pub fn filter_snr(&self, keep: impl Fn(i32) -> bool) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.examples[i].snr)).collect();
        self.subset(&idx)
    }

    /// Frames at `indices` stacked into `[B, 2, 128]`.
    pub fn frames<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(indices.len() * FRAME_HEIGHT * FRAME_LEN);
        for &i in indices {
            data.extend(self.examples[i].iq.data().iter().map(|&v| T::lit(v as f64)));
        }
        Tensor::from_parts(vec![indices.len(), FRAME_HEIGHT, FRAME_LEN], data)
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.examples[i].class).collect()
    }

    /// Stratified 60/20/20 split. Each `(class, snr)` cell is shuffled with
    /// its own generator derived from `seed`; the first `floor(n/5)` go to
    /// validation, the next `floor(n/5)` to test and the rest to training.
    pub fn split(&self, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
        let mut cells: BTreeMap<(usize, i32), Vec<usize>> = BTreeMap::new();
        for (i, e) in self.examples.iter().enumerate() {
            cells.entry((e.class, e.snr)).or_default().push(i);
        }
        let root = Rng::new(seed);
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (k, ((class, snr), mut idx)) in cells.into_iter().enumerate() {
            if idx.len() < 5 {
                return Err(Error::config(format!(
                    "cell (class {class}, snr {snr}) has {} examples; stratifying needs at least 5",
                    idx.len()
                )));
            }
            root.split(k as u64).shuffle(&mut idx);
            let fifth = idx.len() / 5;
            val.extend_from_slice(&idx[..fifth]);
            test.extend_from_slice(&idx[fifth..2 * fifth]);
            train.extend_from_slice(&idx[2 * fifth..]);
        }
        Ok((self.subset(&train), self.subset(&val), self.subset(&test)))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn toy(classes: usize, snrs: &[i32], per_cell: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let mut ex = Vec::new();
        for c in 0..classes {
            for &s in snrs {
                for _ in 0..per_cell {
                    let v: Vec<f32> = (0..2 * FRAME_LEN).map(|_| rng.normal() as f32).collect();
                    ex.push(LabeledExample::new(Tensor::from_vec([2, FRAME_LEN], v).unwrap(), c, s).unwrap());
                }
            }
        }
        Dataset::new((0..classes).map(|c| format!("C{c}")).collect(), ex).unwrap()
    }

    #[test]
    fn split_counts_per_cell() {
        let d = toy(2, &[-2, 0, 2], 10, 1);
        let (tr, va, te) = d.split(5).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (36, 12, 12));
        for c in tr.cell_counts().values() {
            assert_eq!(*c, 6);
        }
        for c in va.cell_counts().values().chain(te.cell_counts().values()) {
            assert_eq!(*c, 2);
        }
    }

    #[test]
    fn split_is_partition() {
        let d = toy(1, &[0], 20, 2);
        let (tr, va, te) = d.split(9).unwrap();
        let key = |e: &LabeledExample| e.iq.data()[0].to_bits();
        let mut all: Vec<u32> = tr.examples().iter().chain(va.examples()).chain(te.examples()).map(key).collect();
        all.sort_unstable();
        let mut orig: Vec<u32> = d.examples().iter().map(key).collect();
        orig.sort_unstable();
        assert_eq!(all, orig);
    }

    #[test]
    fn tiny_cell_rejected() {
        let d = toy(1, &[0], 4, 2);
        assert!(matches!(d.split(0), Err(Error::Config(_))));
    }

    #[test]
    fn bad_class_index() {
        let ex = vec![LabeledExample::new(Tensor::zeros([2, FRAME_LEN]).unwrap(), 3, 0).unwrap()];
        assert!(matches!(Dataset::new(vec!["a".into()], ex), Err(Error::Index(_))));
    }

    #[test]
    fn frames_stack() {
        let d = toy(2, &[0], 2, 3);
        let f = d.frames::<f64>(&[3, 0]);
        assert_eq!(f.shape(), [2, 2, FRAME_LEN]);
        assert_eq!(f.data()[0], d.examples()[3].iq.data()[0] as f64);
        assert_eq!(d.labels(&[3, 0]), vec![1, 0]);
    }
}
