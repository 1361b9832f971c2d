//! Channel impairments and calibrated additive white Gaussian noise.

use std::f64::consts::PI;

use modrec_core::{Error, Result, Rng};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::modulate::{BasebandSignal, SynthConfig};

/// Impairment switches. Everything but noise is off by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub sample_rate_offset: bool,
    pub max_sample_rate_offset_ppm: f64,
    pub carrier_offset: bool,
    pub max_carrier_offset_hz: f64,
    pub multipath: bool,
    /// Mean power of the 3 taps at delays 0, 1 and 2 samples.
    pub multipath_profile: [f64; 3],
    pub noise: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            sample_rate_offset: false,
            max_sample_rate_offset_ppm: 50.0,
            carrier_offset: false,
            max_carrier_offset_hz: 500.0,
            multipath: false,
            multipath_profile: [1.0, 0.4, 0.15],
            noise: true,
        }
    }
}

impl ChannelConfig {
    pub fn impaired() -> Self {
        ChannelConfig {
            sample_rate_offset: true,
            carrier_offset: true,
            multipath: true,
            ..Default::default()
        }
    }
}

/// Mean of `|x[n]|²`.
pub fn measure_power(sig: &BasebandSignal) -> Result<f64> {
    if sig.is_empty() {
        return Err(Error::Contract("cannot measure the power of an empty signal".into()));
    }
    Ok(sig.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / sig.len() as f64)
}

/// Reads `x` at times `n * (1 + ppm * 1e-6)` by linear interpolation,
/// holding the last sample past the end.
pub fn resample(x: &[Complex64], ppm: f64) -> Vec<Complex64> {
    let ratio = 1.0 + ppm * 1e-6;
    let last = x.len().saturating_sub(1);
    (0..x.len())
        .map(|n| {
            let t = n as f64 * ratio;
            let i = (t.floor() as usize).min(last);
            let f = t - i as f64;
            if i >= last {
                x[last]
            } else {
                x[i] * (1.0 - f) + x[i + 1] * f
            }
        })
        .collect()
}

/// Multiplies sample `n` by `exp(j 2π Δf n / fs)`.
pub fn rotate(x: &mut [Complex64], offset_hz: f64, sample_rate: f64) {
    let w = 2.0 * PI * offset_hz / sample_rate;
    for (n, z) in x.iter_mut().enumerate() {
        *z *= Complex64::from_polar(1.0, w * n as f64);
    }
}

/// Causal FIR with complex taps.
pub fn fir(x: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    (0..x.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .filter(|(d, _)| *d <= n)
                .map(|(d, h)| x[n - d] * h)
                .sum()
        })
        .collect()
}

fn complex_normal(rng: &mut Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    Complex64::new(rng.normal() * s, rng.normal() * s)
}

/// Applies the enabled impairments, then adds circularly symmetric noise of
/// variance `P / 10^(snr/10)`, with `P` measured after the impairments.
pub fn apply_channel(sig: &BasebandSignal, cfg: &SynthConfig, snr_db: i32, rng: &mut Rng) -> Result<BasebandSignal> {
    let ch = &cfg.channel;
    let mut x = sig.samples.clone();
    if ch.sample_rate_offset {
        let ppm = rng.uniform_in(-ch.max_sample_rate_offset_ppm, ch.max_sample_rate_offset_ppm);
        x = resample(&x, ppm);
    }
    if ch.carrier_offset {
        let df = rng.uniform_in(-ch.max_carrier_offset_hz, ch.max_carrier_offset_hz);
        rotate(&mut x, df, sig.sample_rate);
    }
    if ch.multipath {
        let taps: Vec<Complex64> = ch.multipath_profile.iter().map(|&p| complex_normal(rng, p)).collect();
        x = fir(&x, &taps);
    }
    let mut out = BasebandSignal::new(x, sig.sample_rate);
    if ch.noise {
        let power = measure_power(&out)?;
        let variance = power / 10f64.powf(snr_db as f64 / 10.0);
        for z in &mut out.samples {
            *z += complex_normal(rng, variance);
        }
    }
    out.snr_db = Some(snr_db);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: Vec<Complex64>) -> BasebandSignal {
        BasebandSignal::new(v, 200e3)
    }

    #[test]
    fn power_fixtures() {
        assert_eq!(measure_power(&sig(vec![Complex64::new(1.0, 0.0)])).unwrap(), 1.0);
        let s = sig(vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]);
        assert_eq!(measure_power(&s).unwrap(), 1.0);
        let d = sig(s.samples.iter().map(|z| z * 2.0).collect());
        assert_eq!(measure_power(&d).unwrap(), 4.0);
        assert!(matches!(measure_power(&sig(vec![])), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_db_noise_variance() {
        let s = sig(vec![Complex64::new(1.0, 0.0); 200_000]);
        let out = apply_channel(&s, &SynthConfig::default(), 0, &mut Rng::new(1)).unwrap();
        let n = out.samples.len() as f64;
        let (mut vi, mut vq) = (0.0, 0.0);
        for z in &out.samples {
            vi += (z.re - 1.0).powi(2);
            vq += z.im.powi(2);
        }
        assert!((vi / n - 0.5).abs() < 0.01 && (vq / n - 0.5).abs() < 0.01);
        assert_eq!(out.snr_db, Some(0));
    }

    #[test]
    fn vanishing_noise() {
        let x: Vec<Complex64> = (0..5000).map(|n| Complex64::from_polar(1.0, n as f64 * 0.1)).collect();
        let out = apply_channel(&sig(x.clone()), &SynthConfig::default(), 60, &mut Rng::new(2)).unwrap();
        let err = out.samples.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / 5000.0;
        assert!(err.sqrt() < 2e-3);
    }

    #[test]
    fn zero_offsets_are_identity() {
        let x: Vec<Complex64> = (0..50).map(|n| Complex64::new(n as f64, -(n as f64))).collect();
        assert_eq!(resample(&x, 0.0), x);
        let mut y = x.clone();
        rotate(&mut y, 0.0, 1.0);
        assert_eq!(y, x);
        assert_eq!(fir(&x, &[Complex64::new(1.0, 0.0)]), x);
    }

    #[test]
    fn impairments_preserve_length() {
        let cfg = SynthConfig {
            channel: ChannelConfig::impaired(),
            ..Default::default()
        };
        let x = vec![Complex64::new(0.5, 0.5); 1000];
        let out = apply_channel(&sig(x), &cfg, 10, &mut Rng::new(3)).unwrap();
        assert_eq!(out.len(), 1000);
        assert!(out.samples.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }
}
