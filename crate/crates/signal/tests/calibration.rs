//! Receiver-side oracles: matched filtering, bit recovery and SNR estimates.

use modrec_core::Rng;
use modrec_signal::modulate::{rrc_taps, Payload};
use modrec_signal::{
    apply_channel, generate_bits, modulate, synthesize, synthesize_audio, AudioConfig, ModulationScheme, SynthConfig,
};
use num_complex::Complex64;

/// Centered correlation with the RRC taps, rescaled so a noiseless symbol
/// sample equals the transmitted point.
fn matched_filter(x: &[Complex64], cfg: &SynthConfig) -> Vec<Complex64> {
    let h = rrc_taps(cfg.rolloff, cfg.samples_per_symbol, cfg.span);
    let half = (h.len() / 2) as isize;
    let g = 1.0 / (cfg.samples_per_symbol as f64).sqrt();
    (0..x.len() as isize)
        .map(|n| {
            let mut acc = Complex64::default();
            for (j, w) in h.iter().enumerate() {
                let k = n + j as isize - half;
                if k >= 0 && (k as usize) < x.len() {
                    acc += x[k as usize] * w;
                }
            }
            acc * g
        })
        .collect()
}

fn symbol_samples(x: &[Complex64], cfg: &SynthConfig, count: usize) -> Vec<Complex64> {
    let y = matched_filter(x, cfg);
    (0..count).map(|k| y[k * cfg.samples_per_symbol]).collect()
}

#[test]
fn qam16_matched_filter_clusters() {
    let cfg = SynthConfig::default();
    let bits = generate_bits(4 * 20_000, 7);
    let sig = modulate(ModulationScheme::Qam16, &Payload::Bits(bits.clone()), &cfg).unwrap();
    let syms = symbol_samples(&sig.samples, &cfg, 20_000);
    let table = ModulationScheme::Qam16.constellation().unwrap();
    let grid: Vec<f64> = [-3.0, -1.0, 1.0, 3.0].iter().map(|v| v / 10f64.sqrt()).collect();
    // every table point sits on the {±1, ±3}/√10 grid
    for p in &table {
        assert!(grid.iter().any(|g| (p.re - g).abs() < 1e-12));
        assert!(grid.iter().any(|g| (p.im - g).abs() < 1e-12));
    }
    let mut sum = vec![Complex64::default(); 16];
    let mut n = vec![0usize; 16];
    // skip the filter edges
    for k in 8..syms.len() - 8 {
        let idx = bits[4 * k..4 * k + 4].iter().fold(0, |a, &b| (a << 1) | b as usize);
        sum[idx] += syms[k];
        n[idx] += 1;
        let nearest = (0..16).min_by(|&a, &b| (syms[k] - table[a]).norm().total_cmp(&(syms[k] - table[b]).norm())).unwrap();
        assert_eq!(nearest, idx, "symbol {k}");
    }
    for i in 0..16 {
        let c = sum[i] / n[i] as f64;
        assert!((c - table[i]).norm() < 1e-3, "point {i}: {c} vs {}", table[i]);
    }
}

#[test]
fn bpsk_loopback_at_18_db() {
    let cfg = SynthConfig::default();
    let nbits = 100_000;
    let bits = generate_bits(nbits, 99);
    let sig = modulate(ModulationScheme::Bpsk, &Payload::Bits(bits.clone()), &cfg).unwrap();
    let noisy = apply_channel(&sig, &cfg, 18, &mut Rng::new(5)).unwrap();
    let syms = symbol_samples(&noisy.samples, &cfg, nbits);
    let errors = syms.iter().zip(&bits).filter(|(s, &b)| (s.re < 0.0) as u8 != b).count();
    let ber = errors as f64 / nbits as f64;
    assert!(ber < 1e-3, "BER {ber}");
}

/// Signal-to-noise ratio of `noisy` against the known clean signal, in dB.
fn empirical_snr(clean: &[Complex64], noisy: &[Complex64]) -> f64 {
    let ps: f64 = clean.iter().map(|z| z.norm_sqr()).sum();
    let pn: f64 = clean.iter().zip(noisy).map(|(c, y)| (y - c).norm_sqr()).sum();
    10.0 * (ps / pn).log10()
}

#[test]
fn snr_labels_are_calibrated() {
    let cfg = SynthConfig::default();
    let n = 1000 * 128;
    for (i, s) in ModulationScheme::ALL.into_iter().enumerate() {
        let clean = synthesize(s, n, &cfg, &mut Rng::new(i as u64)).unwrap();
        for snr in (0..=18).step_by(2) {
            let noisy = apply_channel(&clean, &cfg, snr, &mut Rng::new(100 + snr as u64)).unwrap();
            let est = empirical_snr(&clean.samples, &noisy.samples);
            assert!((est - snr as f64).abs() <= 0.5, "{s} at {snr} dB: {est:.3}");
        }
    }
}

#[test]
fn cpfsk_envelope_is_constant() {
    let sig = synthesize(ModulationScheme::Cpfsk, 50_000, &SynthConfig::default(), &mut Rng::new(4)).unwrap();
    assert!(sig.samples.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-6));
    let g = synthesize(ModulationScheme::Gfsk, 50_000, &SynthConfig::default(), &mut Rng::new(4)).unwrap();
    assert!(g.samples.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-6));
}

#[test]
fn audio_energy_below_four_khz() {
    let fs = 200e3;
    let n = 1 << 16;
    for seed in 0..4 {
        let a = synthesize_audio(n, fs, &AudioConfig::default(), &mut Rng::new(seed));
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        let mut buf: Vec<rustfft::num_complex::Complex<f64>> = a.iter().map(|&v| rustfft::num_complex::Complex::new(v, 0.0)).collect();
        rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let cutoff = (4000.0 / fs * n as f64) as usize;
        let power = |k: usize| buf[k].norm_sqr();
        // real input: count positive and negative frequencies once each
        let total: f64 = (0..=n / 2).map(power).sum();
        let low: f64 = (0..=cutoff).map(power).sum();
        assert!(low / total >= 0.9, "seed {seed}: {:.3}", low / total);
    }
}

#[test]
fn audio_has_silences() {
    let a = synthesize_audio(20_000, 200e3, &AudioConfig::default(), &mut Rng::new(2));
    let mut run = 0;
    let mut longest = 0;
    for v in &a {
        run = if v.abs() < 0.01 { run + 1 } else { 0 };
        longest = longest.max(run);
    }
    assert!(longest >= 100, "{longest}");
}
