#![allow(dead_code)]

use modrec_core::arch::FRAME_LEN;
use modrec_core::{ArchId, ArchitectureSpec, Dataset, LabeledExample, Rng, Tensor};

/// Gaussian frames with a class-dependent offset on the I row, so the
/// classes are separable but not trivially so.
pub fn dataset(classes: usize, snrs: &[i32], per_cell: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let mut ex = Vec::new();
    for c in 0..classes {
        for &s in snrs {
            for _ in 0..per_cell {
                let v: Vec<f32> = (0..2 * FRAME_LEN)
                    .map(|i| {
                        let bump = if i < FRAME_LEN && i % classes == c { 1.5 } else { 0.0 };
                        (rng.normal() + bump) as f32
                    })
                    .collect();
                ex.push(LabeledExample::new(Tensor::from_vec([2, FRAME_LEN], v).unwrap(), c, s).unwrap());
            }
        }
    }
    let names = (0..classes).map(|c| format!("C{c}")).collect();
    Dataset::new(names, ex).unwrap()
}

/// A few-filter CNN2 on full-size frames.
pub fn tiny_spec(classes: usize) -> ArchitectureSpec {
    ArchitectureSpec::preset(ArchId::Cnn2, classes, 0.2).unwrap().scaled(0.03)
}
