//! Modulation schemes and their Gray-mapped constellations.

use std::fmt;
use std::str::FromStr;

use modrec_core::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Serialized by display name (`"AM-DSB"`); parsing accepts the aliases of
/// [`FromStr`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, )]
pub enum ModulationScheme {
    Bpsk,
    Qpsk,
    Psk8,
    Qam16,
    Qam64,
    Gfsk,
    Cpfsk,
    Pam4,
    Wbfm,
    AmDsb,
}

impl ModulationScheme {
    /// Class order used for labels.
    pub const ALL: [ModulationScheme; 10] = [
        ModulationScheme::Bpsk,
        ModulationScheme::Qpsk,
        ModulationScheme::Psk8,
        ModulationScheme::Qam16,
        ModulationScheme::Qam64,
        ModulationScheme::Gfsk,
        ModulationScheme::Cpfsk,
        ModulationScheme::Pam4,
        ModulationScheme::Wbfm,
        ModulationScheme::AmDsb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModulationScheme::Bpsk => "BPSK",
            ModulationScheme::Qpsk => "QPSK",
            ModulationScheme::Psk8 => "8PSK",
            ModulationScheme::Qam16 => "QAM16",
            ModulationScheme::Qam64 => "QAM64",
            ModulationScheme::Gfsk => "GFSK",
            ModulationScheme::Cpfsk => "CPFSK",
            ModulationScheme::Pam4 => "PAM4",
            ModulationScheme::Wbfm => "WBFM",
            ModulationScheme::AmDsb => "AM-DSB",
        }
    }

    pub fn is_analog(self) -> bool {
        matches!(self, ModulationScheme::Wbfm | ModulationScheme::AmDsb)
    }

    pub fn bits_per_symbol(self) -> usize {
        match self {
            ModulationScheme::Bpsk | ModulationScheme::Gfsk | ModulationScheme::Cpfsk => 1,
            ModulationScheme::Qpsk | ModulationScheme::Pam4 => 2,
            ModulationScheme::Psk8 => 3,
            ModulationScheme::Qam16 => 4,
            ModulationScheme::Qam64 => 6,
            ModulationScheme::Wbfm | ModulationScheme::AmDsb => 0,
        }
    }

    /// Points indexed by the symbol's bit pattern (first bit most
    /// significant), scaled to unit mean energy. `None` for the frequency
    /// and analog schemes.
    pub fn constellation(self) -> Option<Vec<Complex64>> {
        use std::f64::consts::PI;
        let psk = |m: usize, offset: f64| -> Vec<Complex64> {
            let mut pts = vec![Complex64::default(); m];
            for pos in 0..m {
                pts[gray(pos)] = Complex64::from_polar(1.0, offset + 2.0 * PI * pos as f64 / m as f64);
            }
            pts
        };
        Some(match self {
            ModulationScheme::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            ModulationScheme::Qpsk => psk(4, PI / 4.0),
            ModulationScheme::Psk8 => psk(8, 0.0),
            ModulationScheme::Pam4 => pam_levels(2).into_iter().map(|a| Complex64::new(a, 0.0)).collect(),
            ModulationScheme::Qam16 => square_qam(2),
            ModulationScheme::Qam64 => square_qam(3),
            _ => return None,
        })
    }
}

/// Binary-reflected Gray code.
pub fn gray(n: usize) -> usize {
    n ^ (n >> 1)
}

/// Amplitude levels indexed by bit pattern: Gray labels along
/// `-(2^b - 1), ..., -1, 1, ..., 2^b - 1`, unit mean energy.
fn pam_levels(bits: usize) -> Vec<f64> {
    let m = 1 << bits;
    let energy = ((m * m - 1) as f64) / 3.0;
    let mut out = vec![0.0; m];
    for pos in 0..m {
        out[gray(pos)] = (2.0 * pos as f64 - (m as f64 - 1.0)) / energy.sqrt();
    }
    out
}

/// Square QAM with `bits` Gray-coded bits per axis, I from the high bits.
fn square_qam(bits: usize) -> Vec<Complex64> {
    let m = 1 << bits;
    let axis = pam_levels(bits);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..m * m).map(|k| Complex64::new(axis[k >> bits] * s, axis[k & (m - 1)] * s)).collect()
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ModulationScheme {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ModulationScheme {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for ModulationScheme {
    type Err = Error;

    /// Case-insensitive; `-`/`_` ignored; `bfsk` maps to GFSK.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| *c != '-' && *c != '_').collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "bpsk" => ModulationScheme::Bpsk,
            "qpsk" => ModulationScheme::Qpsk,
            "8psk" | "psk8" => ModulationScheme::Psk8,
            "qam16" | "16qam" => ModulationScheme::Qam16,
            "qam64" | "64qam" => ModulationScheme::Qam64,
            "gfsk" | "bfsk" => ModulationScheme::Gfsk,
            "cpfsk" => ModulationScheme::Cpfsk,
            "pam4" | "4pam" => ModulationScheme::Pam4,
            "wbfm" => ModulationScheme::Wbfm,
            "amdsb" => ModulationScheme::AmDsb,
            _ => return Err(Error::Config(format!("unknown modulation scheme {s:?}"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_energy() {
        for s in ModulationScheme::ALL {
            if let Some(c) = s.constellation() {
                assert_eq!(c.len(), 1 << s.bits_per_symbol());
                let e = c.iter().map(|p| p.norm_sqr()).sum::<f64>() / c.len() as f64;
                assert!((e - 1.0).abs() < 1e-9, "{s}: {e}");
            }
        }
    }

    #[test]
    fn qam16_grid() {
        let c = ModulationScheme::Qam16.constellation().unwrap();
        let r = 10f64.sqrt();
        for p in &c {
            for v in [p.re * r, p.im * r] {
                assert!([-3.0, -1.0, 1.0, 3.0].iter().any(|l| (v - l).abs() < 1e-12), "{v}");
            }
        }
        // 0000 sits in the (-3, -3) corner
        assert!((c[0] - Complex64::new(-3.0, -3.0) / r).norm() < 1e-12);
    }

    #[test]
    fn qam64_scale() {
        let c = ModulationScheme::Qam64.constellation().unwrap();
        let max = c.iter().map(|p| p.re.abs()).fold(0.0, f64::max);
        assert!((max - 7.0 / 42f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gray_neighbours_differ_by_one_bit() {
        for s in [ModulationScheme::Psk8, ModulationScheme::Qpsk] {
            let c = s.constellation().unwrap();
            let m = c.len();
            for a in 0..m {
                let nearest = (0..m)
                    .filter(|&b| b != a)
                    .min_by(|&x, &y| (c[x] - c[a]).norm().total_cmp(&(c[y] - c[a]).norm()))
                    .unwrap();
                assert_eq!((a ^ nearest).count_ones(), 1, "{s} {a}");
            }
        }
    }

    #[test]
    fn bpsk_mapping() {
        let c = ModulationScheme::Bpsk.constellation().unwrap();
        assert_eq!(c[0], Complex64::new(1.0, 0.0));
        assert_eq!(c[1], Complex64::new(-1.0, 0.0));
    }

    #[test]
    fn names_parse() {
        for s in ModulationScheme::ALL {
            assert_eq!(s.name().parse::<ModulationScheme>().unwrap(), s);
        }
        assert_eq!("bfsk".parse::<ModulationScheme>().unwrap(), ModulationScheme::Gfsk);
        assert!("ofdm".parse::<ModulationScheme>().is_err());
    }
}
