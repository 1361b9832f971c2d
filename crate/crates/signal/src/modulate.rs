//! Complex-baseband modulators.

use std::f64::consts::PI;

use modrec_core::{Error, Result, Rng};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::{synthesize_audio, AudioConfig};
use crate::bits::generate_bits;
use crate::channel::ChannelConfig;
use crate::scheme::ModulationScheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub samples_per_symbol: usize,
    pub rolloff: f64,
    /// RRC length in symbols.
    pub span: usize,
    /// Nominal sample rate, Hz, for the analog and channel constants.
    pub sample_rate: f64,
    pub fm_deviation_hz: f64,
    pub am_index: f64,
    pub gfsk_bt: f64,
    pub gfsk_index: f64,
    pub cpfsk_index: f64,
    pub audio: AudioConfig,
    pub channel: ChannelConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            samples_per_symbol: 8,
            rolloff: 0.35,
            span: 8,
            sample_rate: 200e3,
            fm_deviation_hz: 75e3,
            am_index: 0.5,
            gfsk_bt: 0.35,
            gfsk_index: 1.0,
            cpfsk_index: 0.5,
            audio: AudioConfig::default(),
            channel: ChannelConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_symbol < 2 {
            return Err(Error::Config("samples per symbol must be at least 2".into()));
        }
        if !(self.rolloff > 0.0 && self.rolloff < 1.0) {
            return Err(Error::Config("rolloff must lie in (0, 1)".into()));
        }
        if self.span == 0 || self.span % 2 != 0 {
            return Err(Error::Config("RRC span must be a positive even number of symbols".into()));
        }
        if !(self.sample_rate > 0.0) || !(self.gfsk_bt > 0.0) {
            return Err(Error::Config("sample rate and GFSK BT must be positive".into()));
        }
        Ok(())
    }

    /// Delay of the RRC filter, samples.
    pub fn filter_delay(&self) -> usize {
        self.span * self.samples_per_symbol / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Bits(Vec<u8>),
    Audio(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasebandSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    /// Set once noise has been added.
    pub snr_db: Option<i32>,
}

impl BasebandSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        BasebandSignal {
            samples,
            sample_rate,
            snr_db: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Root-raised-cosine taps over `span` symbols (`span * sps + 1` taps),
/// scaled to unit energy.
pub fn rrc_taps(beta: f64, sps: usize, span: usize) -> Vec<f64> {
    let half = (span * sps / 2) as isize;
    let mut h: Vec<f64> = (-half..=half)
        .map(|n| {
            let t = n as f64 / sps as f64;
            if n == 0 {
                1.0 - beta + 4.0 * beta / PI
            } else if ((4.0 * beta * t).abs() - 1.0).abs() < 1e-9 {
                beta / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * beta)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * beta)).cos())
            } else {
                ((PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos())
                    / (PI * t * (1.0 - (4.0 * beta * t).powi(2)))
            }
        })
        .collect();
    let e = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut h {
        *v /= e;
    }
    h
}

/// Gaussian frequency-smoothing taps over four symbols, summing to one.
pub fn gaussian_taps(bt: f64, sps: usize) -> Vec<f64> {
    let half = (2 * sps) as isize;
    let sigma = (2f64.ln()).sqrt() / (2.0 * PI * bt);
    let mut g: Vec<f64> = (-half..=half)
        .map(|n| {
            let t = n as f64 / sps as f64;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    for v in &mut g {
        *v /= s;
    }
    g
}

/// Groups bits into symbol indices, first bit most significant; a trailing
/// partial symbol is dropped.
pub fn bits_to_symbols(bits: &[u8], per_symbol: usize) -> Vec<usize> {
    bits.chunks_exact(per_symbol)
        .map(|c| c.iter().fold(0, |acc, &b| (acc << 1) | (b & 1) as usize))
        .collect()
}

/// Pulse-shapes `symbols` so that output sample `k * sps` is the peak of
/// symbol `k`. Output length is `symbols.len() * sps`, mean power
/// `E|a|^2` over long runs.
pub fn pulse_shape(symbols: &[Complex64], taps: &[f64], sps: usize) -> Vec<Complex64> {
    let delay = (taps.len() / 2) as isize;
    let gain = (sps as f64).sqrt();
    let n = symbols.len() * sps;
    (0..n)
        .map(|i| {
            let m = i as isize + delay;
            let lo = ((m - taps.len() as isize + 1).max(0) as usize).div_ceil(sps);
            let hi = ((m / sps as isize) as usize).min(symbols.len().saturating_sub(1));
            let mut acc = Complex64::default();
            for k in lo..=hi {
                acc += symbols[k] * taps[(m - (k * sps) as isize) as usize];
            }
            acc * gain
        })
        .collect()
}

fn continuous_phase(freq: &[f64], step: f64) -> Vec<Complex64> {
    let mut phase = 0.0f64;
    freq.iter()
        .map(|&f| {
            let s = Complex64::from_polar(1.0, phase);
            phase = (phase + step * f).rem_euclid(2.0 * PI);
            s
        })
        .collect()
}

pub fn modulate(scheme: ModulationScheme, payload: &Payload, cfg: &SynthConfig) -> Result<BasebandSignal> {
    cfg.validate()?;
    let sps = cfg.samples_per_symbol;
    let samples = match (scheme, payload) {
        (ModulationScheme::Gfsk | ModulationScheme::Cpfsk, Payload::Bits(bits)) => {
            let mut freq: Vec<f64> = bits
                .iter()
                .flat_map(|&b| std::iter::repeat_n(if b & 1 == 1 { 1.0 } else { -1.0 }, sps))
                .collect();
            let index = if scheme == ModulationScheme::Gfsk {
                let g = gaussian_taps(cfg.gfsk_bt, sps);
                let d = (g.len() / 2) as isize;
                let raw = freq.clone();
                for (i, f) in freq.iter_mut().enumerate() {
                    *f = g
                        .iter()
                        .enumerate()
                        .filter_map(|(j, w)| {
                            let k = i as isize + d - j as isize;
                            (0..raw.len() as isize).contains(&k).then(|| w * raw[k as usize])
                        })
                        .sum();
                }
                cfg.gfsk_index
            } else {
                cfg.cpfsk_index
            };
            continuous_phase(&freq, PI * index / sps as f64)
        }
        (s, Payload::Bits(bits)) if !s.is_analog() => {
            let table = s.constellation().expect("linear scheme");
            let symbols: Vec<Complex64> = bits_to_symbols(bits, s.bits_per_symbol())
                .into_iter()
                .map(|k| table[k])
                .collect();
            pulse_shape(&symbols, &rrc_taps(cfg.rolloff, sps, cfg.span), sps)
        }
        (ModulationScheme::Wbfm, Payload::Audio(a)) => {
            continuous_phase(a, 2.0 * PI * cfg.fm_deviation_hz / cfg.sample_rate)
        }
        (ModulationScheme::AmDsb, Payload::Audio(a)) => {
            let raw: Vec<f64> = a.iter().map(|v| 1.0 + cfg.am_index * v).collect();
            let rms = (raw.iter().map(|v| v * v).sum::<f64>() / raw.len().max(1) as f64).sqrt();
            raw.into_iter().map(|v| Complex64::new(v / rms.max(1e-300), 0.0)).collect()
        }
        (s, p) => {
            return Err(Error::Config(format!(
                "{s} cannot modulate a {} payload",
                match p {
                    Payload::Bits(_) => "bit",
                    Payload::Audio(_) => "audio",
                }
            )))
        }
    };
    Ok(BasebandSignal::new(samples, cfg.sample_rate))
}

/// Exactly `n` clean samples of `scheme`, with the start-up transient of the
/// shaping filters discarded. The payload is drawn from `rng`.
pub fn synthesize(scheme: ModulationScheme, n: usize, cfg: &SynthConfig, rng: &mut Rng) -> Result<BasebandSignal> {
    cfg.validate()?;
    let mut sig = if scheme.is_analog() {
        let audio = synthesize_audio(n, cfg.sample_rate, &cfg.audio, rng);
        modulate(scheme, &Payload::Audio(audio), cfg)?
    } else {
        let sps = cfg.samples_per_symbol;
        let symbols = n.div_ceil(sps) + 2 * cfg.span;
        let bits = generate_bits(symbols * scheme.bits_per_symbol(), rng.word());
        let mut s = modulate(scheme, &Payload::Bits(bits), cfg)?;
        s.samples.drain(..cfg.span * sps);
        s
    };
    sig.samples.truncate(n);
    Ok(sig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rrc_shape() {
        let h = rrc_taps(0.35, 8, 8);
        assert_eq!(h.len(), 65);
        assert!((h.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..32 {
            assert!((h[i] - h[64 - i]).abs() < 1e-15);
        }
        assert!(h.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bpsk_symbols() {
        let table = ModulationScheme::Bpsk.constellation().unwrap();
        let s: Vec<Complex64> = bits_to_symbols(&[0, 1], 1).into_iter().map(|k| table[k]).collect();
        assert_eq!(s, vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]);
    }

    #[test]
    fn cpfsk_constant_envelope() {
        let bits = generate_bits(500, 3);
        let s = modulate(ModulationScheme::Cpfsk, &Payload::Bits(bits), &SynthConfig::default()).unwrap();
        assert!(s.samples.iter().all(|z| (z.norm() - 1.0).abs() < 1e-6));
    }

    #[test]
    fn cpfsk_phase_step() {
        // h = 0.5: one symbol turns the phase by ±π/2
        let cfg = SynthConfig::default();
        let s = modulate(ModulationScheme::Cpfsk, &Payload::Bits(vec![1, 1]), &cfg).unwrap();
        let z = s.samples[8];
        assert!((z - Complex64::new(0.0, 1.0)).norm() < 1e-12, "{z}");
    }

    #[test]
    fn payload_family_checked() {
        let cfg = SynthConfig::default();
        assert!(modulate(ModulationScheme::Wbfm, &Payload::Bits(vec![1]), &cfg).is_err());
        assert!(modulate(ModulationScheme::Qpsk, &Payload::Audio(vec![0.0]), &cfg).is_err());
    }

    #[test]
    fn silent_am_is_carrier() {
        let s = modulate(ModulationScheme::AmDsb, &Payload::Audio(vec![0.0; 300]), &SynthConfig::default()).unwrap();
        assert!(s.samples.iter().all(|z| *z == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn unit_power_everywhere() {
        let cfg = SynthConfig::default();
        for (i, s) in ModulationScheme::ALL.into_iter().enumerate() {
            let sig = synthesize(s, 40_000, &cfg, &mut Rng::new(i as u64)).unwrap();
            assert_eq!(sig.len(), 40_000);
            let p = sig.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / sig.len() as f64;
            let tol = if s.is_analog() { 0.15 } else { 0.05 };
            assert!((p - 1.0).abs() < tol, "{s}: {p}");
        }
    }

    #[test]
    fn bad_config() {
        let cfg = SynthConfig {
            samples_per_symbol: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
