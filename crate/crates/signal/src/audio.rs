//! Synthetic voice-like audio: low-passed noise under a syllabic envelope,
//! interrupted by silences.

use modrec_core::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioConfig {
    /// Syllabic envelope rate range, Hz.
    pub syllable_rate_hz: [f64; 2],
    /// Range of the fraction of time spent silent.
    pub silence_fraction: [f64; 2],
    /// Corner of each of the two cascaded one-pole low-pass stages, Hz.
    pub corner_hz: f64,
    /// Length of the fade into and out of each silence, samples.
    pub ramp_samples: usize,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig {
            syllable_rate_hz: [2.0, 6.0],
            silence_fraction: [0.2, 0.4],
            corner_hz: 1500.0,
            ramp_samples: 200,
        }
    }
}

/// `n` samples peak-normalised to `|a| <= 1`; silent stretches are exactly 0.
///
/// Time is cut into cycles of `min(rate / syllable_rate, n / 4)` samples;
/// each cycle ends in a silence covering the drawn silence fraction, and the
/// cycle grid starts at a random offset.
pub fn synthesize_audio(n: usize, sample_rate: f64, cfg: &AudioConfig, rng: &mut Rng) -> Vec<f64> {
    let syl = rng.uniform_in(cfg.syllable_rate_hz[0], cfg.syllable_rate_hz[1]);
    let silence = rng.uniform_in(cfg.silence_fraction[0], cfg.silence_fraction[1]);
    let cycle = ((sample_rate / syl) as usize).min(n / 4).max(1);
    let silent = (silence * cycle as f64).round() as usize;
    let voiced = cycle - silent;
    let offset = rng.below(cycle);
    let phase = rng.uniform_in(0.0, std::f64::consts::PI);
    let ramp = cfg.ramp_samples.min(voiced / 4).max(1) as f64;

    let alpha = 1.0 - (-2.0 * std::f64::consts::PI * cfg.corner_hz / sample_rate).exp();
    let (mut s1, mut s2) = (0.0, 0.0);
    // settle the filters before the first output sample
    let settle = (8.0 / alpha) as usize;
    for _ in 0..settle {
        s1 += alpha * (rng.normal() - s1);
        s2 += alpha * (s1 - s2);
    }

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        s1 += alpha * (rng.normal() - s1);
        s2 += alpha * (s1 - s2);
        let p = (i + offset) % cycle;
        let gate = if p >= voiced {
            0.0
        } else {
            (((p + 1) as f64) / ramp).min((voiced - p) as f64 / ramp).min(1.0)
        };
        let t = i as f64 / sample_rate;
        let env = 0.25 + 0.75 * (std::f64::consts::PI * syl * t + phase).sin().powi(2);
        out.push(gate * env * s2);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in &mut out {
            *v /= peak;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn longest_quiet_run(a: &[f64]) -> usize {
        let (mut best, mut run) = (0, 0);
        for v in a {
            run = if v.abs() < 0.01 { run + 1 } else { 0 };
            best = best.max(run);
        }
        best
    }

    #[test]
    fn bounded_with_silence() {
        for seed in 0..5 {
            let a = synthesize_audio(10_000, 200e3, &AudioConfig::default(), &mut Rng::new(seed));
            assert_eq!(a.len(), 10_000);
            assert!(a.iter().all(|v| v.abs() <= 1.0));
            assert!(a.iter().any(|v| v.abs() > 0.99));
            assert!(longest_quiet_run(&a) >= 100);
        }
    }

    #[test]
    fn silence_share() {
        let a = synthesize_audio(400_000, 200e3, &AudioConfig::default(), &mut Rng::new(7));
        let zero = a.iter().filter(|v| **v == 0.0).count() as f64 / a.len() as f64;
        assert!((0.18..=0.42).contains(&zero), "{zero}");
    }

    #[test]
    fn tiny_durations() {
        for n in 1..6 {
            let a = synthesize_audio(n, 200e3, &AudioConfig::default(), &mut Rng::new(n as u64));
            assert_eq!(a.len(), n);
            assert!(a.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        }
    }
}
