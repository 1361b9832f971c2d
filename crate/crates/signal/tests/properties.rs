//! Randomized invariants of the synthesis chain.

use modrec_core::Rng;
use modrec_signal::modulate::Payload;
use modrec_signal::{apply_channel, generate_bits, measure_power, modulate, synthesize, BasebandSignal, ModulationScheme, SynthConfig};
use num_complex::Complex64;
use proptest::prelude::*;

fn scheme() -> impl Strategy<Value = ModulationScheme> {
    (0usize..10).prop_map(|i| ModulationScheme::ALL[i])
}

#[test]
fn constellations_have_unit_energy() {
    for s in ModulationScheme::ALL {
        if let Some(t) = s.constellation() {
            assert_eq!(t.len(), 1 << s.bits_per_symbol());
            let e = t.iter().map(|z| z.norm_sqr()).sum::<f64>() / t.len() as f64;
            assert!((e - 1.0).abs() < 1e-9, "{s}: {e}");
        }
    }
}

#[test]
fn gray_neighbours_differ_by_one_bit() {
    for s in [ModulationScheme::Qpsk, ModulationScheme::Psk8, ModulationScheme::Qam16, ModulationScheme::Qam64] {
        let t = s.constellation().unwrap();
        for (i, p) in t.iter().enumerate() {
            let d = t.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| (p - q).norm()).fold(f64::INFINITY, f64::min);
            for (j, q) in t.iter().enumerate() {
                if j != i && ((p - q).norm() - d).abs() < 1e-9 {
                    assert_eq!((i ^ j).count_ones(), 1, "{s}: {i} vs {j}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthesis_is_a_function_of_the_seed(s in scheme(), seed in any::<u64>(), n in 1usize..600) {
        let cfg = SynthConfig::default();
        let a = synthesize(s, n, &cfg, &mut Rng::new(seed)).unwrap();
        let b = synthesize(s, n, &cfg, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(a.len(), n);
        prop_assert!(a.samples.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn power_is_quadratic(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..50), k in -4.0f64..4.0) {
        let x: Vec<Complex64> = v.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
        let s = BasebandSignal::new(x.clone(), 1.0);
        let t = BasebandSignal::new(x.iter().map(|z| z * k).collect(), 1.0);
        let (p, q) = (measure_power(&s).unwrap(), measure_power(&t).unwrap());
        prop_assert!((q - k * k * p).abs() <= 1e-9 * (1.0 + q));
    }

    #[test]
    fn noise_tracks_the_label(snr in -20i32..=18, seed in any::<u64>()) {
        let cfg = SynthConfig::default();
        let x = BasebandSignal::new(vec![Complex64::new(0.6, -0.8); 40_000], 200e3);
        let y = apply_channel(&x, &cfg, snr, &mut Rng::new(seed)).unwrap();
        let noise = y.samples.iter().map(|z| (z - Complex64::new(0.6, -0.8)).norm_sqr()).sum::<f64>() / 40_000.0;
        let want = 10f64.powf(-snr as f64 / 10.0);
        prop_assert!((noise / want - 1.0).abs() < 0.05, "{} vs {}", noise, want);
        prop_assert_eq!(y.snr_db, Some(snr));
    }

    #[test]
    fn bpsk_bits_map_to_signs(bits in prop::collection::vec(0u8..2, 1..40)) {
        let t = ModulationScheme::Bpsk.constellation().unwrap();
        for &b in &bits {
            prop_assert_eq!(t[b as usize].re, if b == 0 { 1.0 } else { -1.0 });
        }
        let s = modulate(ModulationScheme::Bpsk, &Payload::Bits(bits.clone()), &SynthConfig::default()).unwrap();
        prop_assert_eq!(s.len(), bits.len() * 8);
    }

    #[test]
    fn whitened_bits_are_balanced(seed in any::<u64>()) {
        let b = generate_bits(200_000, seed);
        let ones = b.iter().filter(|&&x| x == 1).count() as f64 / b.len() as f64;
        prop_assert!((0.48..=0.52).contains(&ones), "{}", ones);
    }
}
