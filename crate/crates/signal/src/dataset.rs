//! Labeled frame datasets cut from synthesized, channel-impaired signals.

use std::ops::Range;
use std::str::FromStr;

use modrec_core::arch::FRAME_LEN;
use modrec_core::{Dataset, Error, LabeledExample, Provenance, Result, Rng, Tensor};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_channel, ChannelConfig};
use crate::modulate::{synthesize, SynthConfig};
use crate::scheme::ModulationScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 800 frames per cell: 160,000 frames over 10 classes and 20 SNRs.
    Paper,
    /// 100 frames per cell: 20,000 frames.
    SmokePaper,
    /// 5 frames per cell: 1,000 frames.
    Smoke,
}

impl Profile {
    pub fn frames_per_cell(self) -> usize {
        match self {
            Profile::Paper => 800,
            Profile::SmokePaper => 100,
            Profile::Smoke => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::SmokePaper => "smoke-paper",
            Profile::Smoke => "smoke",
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "smoke-paper" | "smoke_paper" => Ok(Profile::SmokePaper),
            "smoke" | "tiny" => Ok(Profile::Smoke),
            _ => Err(Error::Config(format!("unknown profile {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub profile: String,
    pub frames_per_cell: usize,
    pub schemes: Vec<ModulationScheme>,
    pub snr_min: i32,
    pub snr_max: i32,
    pub snr_step: i32,
    /// Rotate every frame by its own uniformly drawn carrier phase.
    pub random_phase: bool,
    pub synth: SynthConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig::profile(Profile::Paper)
    }
}

impl GenConfig {
    pub fn profile(p: Profile) -> Self {
        GenConfig {
            profile: p.name().to_string(),
            frames_per_cell: p.frames_per_cell(),
            schemes: ModulationScheme::ALL.to_vec(),
            snr_min: -20,
            snr_max: 18,
            snr_step: 2,
            random_phase: true,
            synth: SynthConfig::default(),
        }
    }

    /// Turns on every channel impairment.
    pub fn impaired(mut self) -> Self {
        self.synth.channel = ChannelConfig::impaired();
        self.profile = format!("{}+impaired", self.profile);
        self
    }

    pub fn snrs(&self) -> Vec<i32> {
        if self.snr_step <= 0 {
            return Vec::new();
        }
        (self.snr_min..=self.snr_max).step_by(self.snr_step as usize).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one modulation scheme is required".into()));
        }
        if self.frames_per_cell == 0 {
            return Err(Error::Config("frames_per_cell must be at least 1".into()));
        }
        if self.snr_step <= 0 || self.snr_min > self.snr_max {
            return Err(Error::Config("SNR range needs min <= max and a positive step".into()));
        }
        if self.snr_min < i8::MIN as i32 || self.snr_max > i8::MAX as i32 {
            return Err(Error::Config("SNR labels must fit in a signed byte".into()));
        }
        let mut seen = self.schemes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.schemes.len() {
            return Err(Error::Config("modulation schemes must be distinct".into()));
        }
        self.synth.validate()
    }
}

/// Back-to-back, non-overlapping frame windows starting at `offset`.
pub fn frame_windows(offset: usize, frames: usize) -> Vec<Range<usize>> {
    (0..frames).map(|k| offset + k * FRAME_LEN..offset + (k + 1) * FRAME_LEN).collect()
}

/// Scales a frame to unit mean power and stores it as `[2, 128]` f32.
pub fn frame_tensor(samples: &[Complex64], rotation: Complex64) -> Tensor<f32> {
    let p = samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / samples.len() as f64;
    let g = if p > 0.0 { 1.0 / p.sqrt() } else { 1.0 };
    let mut data = vec![0f32; 2 * samples.len()];
    for (k, z) in samples.iter().enumerate() {
        let z = z * rotation * g;
        data[k] = z.re as f32;
        data[samples.len() + k] = z.im as f32;
    }
    Tensor::from_vec([2, samples.len()], data).expect("frame shape")
}

/// Generator stream of one `(scheme, snr)` cell.
pub fn cell_rng(seed: u64, scheme: ModulationScheme, snr: i32) -> Rng {
    let key = ((scheme as u64) << 32) | (snr as u32 as u64);
    Rng::new(seed).split(key)
}

/// The frames of one cell, in window order.
pub fn build_cell(cfg: &GenConfig, seed: u64, class: usize, snr: i32) -> Result<Vec<LabeledExample>> {
    let scheme = cfg.schemes[class];
    let rng = cell_rng(seed, scheme, snr);
    let n = cfg.frames_per_cell;
    let clean = synthesize(scheme, n * FRAME_LEN, &cfg.synth, &mut rng.split(0))?;
    let noisy = apply_channel(&clean, &cfg.synth, snr, &mut rng.split(1))?;
    let mut phase = rng.split(2);
    frame_windows(0, n)
        .into_iter()
        .map(|w| {
            let rot = if cfg.random_phase {
                Complex64::from_polar(1.0, phase.uniform_in(0.0, 2.0 * std::f64::consts::PI))
            } else {
                Complex64::new(1.0, 0.0)
            };
            LabeledExample::new(frame_tensor(&noisy.samples[w], rot), class, snr)
        })
        .collect()
}

/// Every `(scheme, snr)` cell, classes outer and SNRs inner. Cells are
/// generated in parallel but each draws only from its own stream, so the
/// result does not depend on the thread count.
pub fn build_dataset(cfg: &GenConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let cells: Vec<(usize, i32)> = (0..cfg.schemes.len())
        .flat_map(|c| cfg.snrs().into_iter().map(move |s| (c, s)))
        .collect();
    let parts = cells
        .par_iter()
        .map(|&(c, s)| build_cell(cfg, seed, c, s))
        .collect::<Result<Vec<_>>>()?;
    let classes = cfg.schemes.iter().map(|s| s.name().to_string()).collect();
    Ok(Dataset::new(classes, parts.into_iter().flatten().collect())?.with_provenance(Provenance {
        seed: Some(seed),
        profile: Some(cfg.profile.clone()),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_disjoint() {
        let w = frame_windows(3, 50);
        let mut hit = vec![0u8; 3 + 50 * FRAME_LEN];
        for r in w {
            assert_eq!(r.len(), FRAME_LEN);
            for i in r {
                hit[i] += 1;
            }
        }
        assert!(hit[..3].iter().all(|&h| h == 0));
        assert!(hit[3..].iter().all(|&h| h == 1));
    }

    #[test]
    fn profile_sizes() {
        let g = GenConfig::profile(Profile::Paper);
        assert_eq!(g.snrs().len(), 20);
        assert_eq!(g.snrs()[0], -20);
        assert_eq!(*g.snrs().last().unwrap(), 18);
        assert_eq!(g.schemes.len() * g.snrs().len() * g.frames_per_cell, 160_000);
        assert_eq!(GenConfig::profile(Profile::SmokePaper).frames_per_cell * 200, 20_000);
    }

    #[test]
    fn single_cell_config() {
        let cfg = GenConfig {
            schemes: vec![ModulationScheme::Qpsk],
            snr_min: 4,
            snr_max: 4,
            frames_per_cell: 10,
            ..GenConfig::profile(Profile::Smoke)
        };
        let d = build_dataset(&cfg, 1).unwrap();
        assert_eq!(d.len(), 10);
        assert!(d.examples().iter().all(|e| e.class == 0 && e.snr == 4));
        for e in d.examples() {
            assert!((e.mean_power() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn empty_scheme_list() {
        let cfg = GenConfig {
            schemes: vec![],
            ..GenConfig::profile(Profile::Smoke)
        };
        assert!(matches!(build_dataset(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn cell_stream_ignores_other_cells() {
        let full = GenConfig::profile(Profile::Smoke);
        let only = GenConfig {
            snr_min: 6,
            snr_max: 6,
            ..full.clone()
        };
        let a = build_cell(&full, 9, 3, 6).unwrap();
        let b = build_cell(&only, 9, 3, 6).unwrap();
        assert_eq!(a[0].iq, b[0].iq);
    }
}
