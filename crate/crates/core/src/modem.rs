//! Square QAM constellations with per-axis reflected Gray labels, and the
//! BICM bit interleaver.
//!
//! Symbols are stored in label order: `symbols()[l]` is the point whose k-bit
//! label, read MSB first as `b_0 b_1 .. b_{k-1}`, equals `l`. The first `k/2`
//! label bits select the in-phase level and the remaining bits the quadrature
//! level. Constellations have unit average power.

use num_complex::Complex64;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// M-ary square QAM alphabet with Gray labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: usize,
    bits: usize,
    symbols: Vec<Complex64>,
}

fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

impl Constellation {
    /// Builds the unit-power square QAM of order `m` (4, 16 or 64).
    pub fn new(m: usize) -> Result<Self> {
        if !matches!(m, 4 | 16 | 64) {
            return Err(Error::UnsupportedOrder(m));
        }
        let bits = m.trailing_zeros() as usize;
        let half = bits / 2;
        let side = 1usize << half;
        // E|s|^2 of the odd-integer grid is 2(M-1)/3
        let scale = (2.0 * (m as f64 - 1.0) / 3.0).sqrt().recip();
        let level = |i: usize| (2.0 * i as f64 - (side as f64 - 1.0)) * scale;
        let mut symbols = vec![Complex64::new(0.0, 0.0); m];
        for i in 0..side {
            for q in 0..side {
                let label = (gray(i) << half) | gray(q);
                symbols[label] = Complex64::new(level(i), level(q));
            }
        }
        Ok(Self {
            order: m,
            bits,
            symbols,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    /// Points indexed by label.
    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    pub fn symbol(&self, index: usize) -> Complex64 {
        self.symbols[index]
    }

    /// Bit `i` of the label of symbol `index` (the reverse map `A_i`).
    pub fn bit(&self, index: usize, i: usize) -> Result<u8> {
        if i >= self.bits {
            return Err(Error::BitOutOfRange {
                pos: i,
                bits: self.bits,
            });
        }
        if index >= self.order {
            return Err(Error::SymbolOutOfRange {
                index,
                order: self.order,
            });
        }
        Ok(self.bit_unchecked(index, i))
    }

    #[inline]
    pub(crate) fn bit_unchecked(&self, index: usize, i: usize) -> u8 {
        ((index >> (self.bits - 1 - i)) & 1) as u8
    }

    /// Average symbol energy (1 up to rounding).
    pub fn average_power(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.order as f64
    }

    /// Maps a bit sequence (length a multiple of k) to symbol indices.
    pub fn map_bits(&self, bits: &[u8]) -> Result<Vec<usize>> {
        if bits.len() % self.bits != 0 {
            return Err(Error::LengthMismatch {
                expected: bits.len().next_multiple_of(self.bits),
                actual: bits.len(),
            });
        }
        Ok(bits
            .chunks_exact(self.bits)
            .map(|c| c.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize))
            .collect())
    }

    /// Inverse of [`map_bits`](Self::map_bits).
    pub fn demap_indices(&self, indices: &[usize]) -> Vec<u8> {
        indices
            .iter()
            .flat_map(|&l| (0..self.bits).map(move |i| ((l >> (self.bits - 1 - i)) & 1) as u8))
            .collect()
    }
}

/// Seeded bit interleaver: `out[i] = in[perm[i]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
    seed: u64,
}

impl Interleaver {
    /// Uniformly random permutation of `0..n` (Fisher-Yates) from `seed`.
    pub fn new(n: usize, seed: u64) -> Self {
        Self::for_codeword(n, seed, 0)
    }

    /// Permutation for codeword `index` of the experiment seeded by `seed`.
    pub fn for_codeword(n: usize, seed: u64, index: u64) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = rng::stream(seed, Domain::Interleaver, index);
        perm.shuffle(&mut rng);
        Self { perm, seed }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn interleave<T: Copy>(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_len(input.len())?;
        Ok(self.perm.iter().map(|&p| input[p]).collect())
    }

    pub fn deinterleave<T: Copy + Default>(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_len(input.len())?;
        let mut out = vec![T::default(); input.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = input[i];
        }
        Ok(out)
    }

    fn check_len(&self, actual: usize) -> Result<()> {
        if actual != self.perm.len() {
            return Err(Error::LengthMismatch {
                expected: self.perm.len(),
                actual,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn qpsk_points_and_power() {
        let c = Constellation::new(4).unwrap();
        let a = std::f64::consts::FRAC_1_SQRT_2;
        for s in c.symbols() {
            assert!((s.re.abs() - a).abs() < 1e-15 && (s.im.abs() - a).abs() < 1e-15);
        }
        assert!((c.average_power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sixteen_qam_levels() {
        let c = Constellation::new(16).unwrap();
        let unit = 10f64.sqrt().recip();
        let mut levels: Vec<i64> = c
            .symbols()
            .iter()
            .map(|s| (s.re / unit).round() as i64)
            .collect();
        levels.sort_unstable();
        levels.dedup();
        assert_eq!(levels, vec![-3, -1, 1, 3]);
        for s in c.symbols() {
            assert!((s.re / unit - (s.re / unit).round()).abs() < 1e-12);
        }
    }

    #[test]
    fn unsupported_order_rejected() {
        assert!(matches!(Constellation::new(8), Err(Error::UnsupportedOrder(8))));
        assert!(Constellation::new(256).is_err());
    }

    #[test]
    fn bit_extraction() {
        let c = Constellation::new(4).unwrap();
        assert_eq!(c.bit(0, 0).unwrap(), 0);
        assert_eq!(c.bit(0, 1).unwrap(), 0);
        for i in 0..2 {
            let ones: u32 = (0..4).map(|s| c.bit(s, i).unwrap() as u32).sum();
            assert_eq!(ones, 2);
        }
        let c16 = Constellation::new(16).unwrap();
        for i in 0..4 {
            let ones: u32 = (0..16).map(|s| c16.bit(s, i).unwrap() as u32).sum();
            assert_eq!(ones, 8);
        }
        assert!(matches!(c.bit(0, 2), Err(Error::BitOutOfRange { .. })));
        assert!(matches!(c.bit(4, 0), Err(Error::SymbolOutOfRange { .. })));
    }

    #[test]
    fn gray_adjacency_all_orders() {
        for m in [4, 16, 64] {
            let c = Constellation::new(m).unwrap();
            let step = 2.0 * (2.0 * (m as f64 - 1.0) / 3.0).sqrt().recip();
            let mut pairs = 0;
            for a in 0..m {
                for b in (a + 1)..m {
                    let d = c.symbol(a) - c.symbol(b);
                    let axis_neighbor = ((d.re.abs() - step).abs() < 1e-9 && d.im.abs() < 1e-9)
                        || ((d.im.abs() - step).abs() < 1e-9 && d.re.abs() < 1e-9);
                    if axis_neighbor {
                        pairs += 1;
                        assert_eq!((a ^ b).count_ones(), 1, "M={m}: {a} vs {b}");
                    }
                }
            }
            let side = (m as f64).sqrt() as usize;
            assert_eq!(pairs, 2 * side * (side - 1));
        }
    }

    #[test]
    fn identity_interleaver_is_noop() {
        let iv = Interleaver::identity(5);
        let x = [1u8, 0, 1, 1, 0];
        assert_eq!(iv.interleave(&x).unwrap(), x);
    }

    #[test]
    fn seeds_give_different_permutations() {
        let a = Interleaver::new(1000, 1);
        let b = Interleaver::new(1000, 2);
        assert_ne!(a.permutation(), b.permutation());
        assert_eq!(a, Interleaver::new(1000, 1));
    }

    #[test]
    fn interleaver_length_mismatch() {
        let iv = Interleaver::new(8, 3);
        assert!(matches!(
            iv.interleave(&[0u8; 7]),
            Err(Error::LengthMismatch { expected: 8, actual: 7 })
        ));
        assert!(iv.deinterleave(&[0.0f64; 9]).is_err());
    }

    proptest! {
        #[test]
        fn interleaver_round_trip(seed in any::<u64>(), bits in proptest::collection::vec(0u8..2, 1..400)) {
            let iv = Interleaver::new(bits.len(), seed);
            let back = iv.deinterleave(&iv.interleave(&bits).unwrap()).unwrap();
            prop_assert_eq!(back, bits);
        }

        #[test]
        fn bits_symbols_round_trip(order_idx in 0usize..3, raw in proptest::collection::vec(0u8..2, 0..60)) {
            let c = Constellation::new([4, 16, 64][order_idx]).unwrap();
            let k = c.bits_per_symbol();
            let bits = &raw[..raw.len() / k * k];
            let idx = c.map_bits(bits).unwrap();
            prop_assert_eq!(c.demap_indices(&idx), bits.to_vec());
        }
    }
}
