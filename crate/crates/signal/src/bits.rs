//! Whitened source bits: a bundled text corpus XORed with an LFSR stream.

/// Public-domain sonnets used as the digital source.
pub const CORPUS: &str = include_str!("../data/corpus.txt");

/// 16-bit Fibonacci LFSR with feedback polynomial x^16 + x^14 + x^13 + x^11 + 1
/// (period 65535).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lfsr(u16);

impl Lfsr {
    /// A zero state would lock up, so it is replaced by `0xACE1`.
    pub fn new(state: u16) -> Self {
        Lfsr(if state == 0 { 0xACE1 } else { state })
    }

    pub fn state(self) -> u16 {
        self.0
    }

    /// Emits the low bit, then shifts in the feedback bit at the top.
    pub fn next_bit(&mut self) -> u8 {
        let s = self.0;
        let out = (s & 1) as u8;
        let fb = (s ^ (s >> 2) ^ (s >> 3) ^ (s >> 5)) & 1;
        self.0 = (s >> 1) | (fb << 15);
        out
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Corpus bits, most significant bit of each byte first, cycling.
pub fn corpus_bits(start: usize) -> impl Iterator<Item = u8> {
    let bytes = CORPUS.as_bytes();
    let total = bytes.len() * 8;
    (0..).map(move |k| {
        let i = (start + k) % total;
        (bytes[i / 8] >> (7 - i % 8)) & 1
    })
}

/// `source[i] ^ whitening[i]`.
pub fn whiten<'a, I>(source: I, lfsr: &'a mut Lfsr) -> impl Iterator<Item = u8> + 'a
where
    I: IntoIterator<Item = u8>,
    I::IntoIter: 'a,
{
    source.into_iter().map(move |b| b ^ lfsr.next_bit())
}

/// `n` whitened bits. The seed picks both the corpus starting bit and the
/// LFSR state.
pub fn generate_bits(n: usize, seed: u64) -> Vec<u8> {
    let h = mix(seed);
    let start = (h >> 16) as usize % (CORPUS.len() * 8);
    let mut lfsr = Lfsr::new(h as u16);
    whiten(corpus_bits(start).take(n), &mut lfsr).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximal_period() {
        let mut l = Lfsr::new(1);
        let mut n = 0u32;
        loop {
            l.next_bit();
            n += 1;
            if l.state() == 1 {
                break;
            }
        }
        assert_eq!(n, 65535);
    }

    #[test]
    fn xor_table() {
        // corpus bit 0 against an LFSR whose next output is 1
        let mut l = Lfsr::new(1);
        assert_eq!(whiten([0u8], &mut l).collect::<Vec<_>>(), vec![1]);
        let mut l = Lfsr::new(1);
        assert_eq!(whiten([1u8], &mut l).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn balanced_and_repeatable() {
        let b = generate_bits(1_000_000, 42);
        let ones = b.iter().map(|&x| x as usize).sum::<usize>() as f64 / b.len() as f64;
        assert!((0.49..=0.51).contains(&ones), "{ones}");
        assert_eq!(b, generate_bits(1_000_000, 42));
        assert_ne!(generate_bits(64, 1), generate_bits(64, 2));
    }

    #[test]
    fn corpus_is_ascii() {
        assert!(CORPUS.is_ascii());
        // 'S' = 0x53 = 0101_0011
        let first: Vec<u8> = corpus_bits(0).take(8).collect();
        assert_eq!(first, vec![0, 1, 0, 1, 0, 0, 1, 1]);
    }
}
