//! Packed watermarks and bitwise accuracy.
//!
//! Bit `k` lives in word `k / 64` at position `k % 64`. Bits at positions
//! `>= n` in the last word are always zero, which lets matched-bit counts be
//! computed as `n - popcount(a ^ b)` without masking.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;

use crate::{Error, Result};

pub(crate) const WORD_BITS: usize = 64;

#[inline]
pub(crate) fn words_for(n: usize) -> usize {
    n.div_ceil(WORD_BITS)
}

/// Matched-bit count between two packed words slices of the same length `n`.
#[inline]
pub(crate) fn matched_words(a: &[u64], b: &[u64], n: usize) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    let diff: u32 = a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum();
    n as u32 - diff
}

#[inline]
fn tail_mask(n: usize) -> u64 {
    match n % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// A fixed-length bitstring.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Watermark {
    n: usize,
    words: Vec<u64>,
}

impl Watermark {
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyWatermark);
        }
        Ok(Watermark { n, words: vec![0; words_for(n)] })
    }

    pub fn ones(n: usize) -> Result<Self> {
        Ok(Self::zeros(n)?.complement())
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let mut w = Self::zeros(bits.len())?;
        for (k, &b) in bits.iter().enumerate() {
            w.set(k, b);
        }
        Ok(w)
    }

    /// Parses a `'0'`/`'1'` string; character `k` is bit `k`.
    pub fn parse_bits(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidBits(format!("unexpected character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(&bits)
    }

    /// Builds from packed words, rejecting set padding bits.
    pub(crate) fn from_words(n: usize, words: Vec<u64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyWatermark);
        }
        if words.len() != words_for(n) {
            return Err(Error::InvalidBits(format!("{} words for n={n}", words.len())));
        }
        if words[words.len() - 1] & !tail_mask(n) != 0 {
            return Err(Error::InvalidBits("padding bits set".into()));
        }
        Ok(Watermark { n, words })
    }

    /// Uniformly random watermark; each bit an independent fair coin.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let mut w = Self::zeros(n)?;
        for word in &mut w.words {
            *word = rng.gen();
        }
        let last = w.words.len() - 1;
        w.words[last] &= tail_mask(n);
        Ok(w)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, k: usize) -> bool {
        assert!(k < self.n, "bit {k} out of range for n={}", self.n);
        self.words[k / WORD_BITS] >> (k % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, k: usize, value: bool) {
        assert!(k < self.n, "bit {k} out of range for n={}", self.n);
        let mask = 1u64 << (k % WORD_BITS);
        if value {
            self.words[k / WORD_BITS] |= mask;
        } else {
            self.words[k / WORD_BITS] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, k: usize) {
        assert!(k < self.n, "bit {k} out of range for n={}", self.n);
        self.words[k / WORD_BITS] ^= 1u64 << (k % WORD_BITS);
    }

    /// XOR with a packed mask of the same length.
    pub(crate) fn xor_words(&mut self, mask: &[u64]) {
        for (w, m) in self.words.iter_mut().zip(mask) {
            *w ^= m;
        }
        let last = self.words.len() - 1;
        self.words[last] &= tail_mask(self.n);
    }

    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        let last = out.words.len() - 1;
        out.words[last] &= tail_mask(self.n);
        out
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Number of positions where `self` and `other` agree.
    pub fn matched(&self, other: &Watermark) -> Result<u32> {
        self.check_len(other)?;
        Ok(matched_words(&self.words, &other.words, self.n))
    }

    pub fn hamming(&self, other: &Watermark) -> Result<u32> {
        Ok(self.n as u32 - self.matched(other)?)
    }

    /// Positions where `self` and `other_words` agree, ascending.
    pub(crate) fn matching_positions(&self, other_words: &[u64]) -> Vec<usize> {
        let mut out = Vec::new();
        for (wi, (a, b)) in self.words.iter().zip(other_words).enumerate() {
            let mut eq = !(a ^ b);
            if wi == self.words.len() - 1 {
                eq &= tail_mask(self.n);
            }
            while eq != 0 {
                let bit = eq.trailing_zeros() as usize;
                out.push(wi * WORD_BITS + bit);
                eq &= eq - 1;
            }
        }
        out
    }

    pub(crate) fn check_len(&self, other: &Watermark) -> Result<()> {
        if self.n != other.n {
            return Err(Error::LengthMismatch { left: self.n, right: other.n });
        }
        Ok(())
    }

    /// MSB-first hex: bit `k` is bit `7 - k % 8` of byte `k / 8`.
    pub fn to_hex(&self) -> String {
        let bytes = (0..self.n.div_ceil(8))
            .map(|byte| {
                (0..8).fold(0u8, |acc, j| {
                    let k = byte * 8 + j;
                    let bit = k < self.n && self.get(k);
                    acc | ((bit as u8) << (7 - j))
                })
            })
            .collect::<Vec<u8>>();
        hex::encode(bytes)
    }

    pub fn from_hex(n: usize, s: &str) -> Result<Self> {
        let s = s.trim();
        let expected = 2 * n.div_ceil(8);
        if s.len() != expected {
            return Err(Error::InvalidBits(format!(
                "hex watermark has {} digits, expected {expected} for n={n}",
                s.len()
            )));
        }
        let bytes = hex::decode(s).map_err(|e| Error::InvalidBits(e.to_string()))?;
        let mut w = Self::zeros(n)?;
        for (byte_idx, byte) in bytes.iter().enumerate() {
            for j in 0..8 {
                let k = byte_idx * 8 + j;
                let bit = byte >> (7 - j) & 1 == 1;
                if k >= n {
                    if bit {
                        return Err(Error::InvalidBits("padding bits set".into()));
                    }
                } else if bit {
                    w.set(k, true);
                }
            }
        }
        Ok(w)
    }
}

impl fmt::Display for Watermark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.n {
            f.write_str(if self.get(k) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Watermark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Watermark({self})")
    }
}

/// Bitwise accuracy kept as an exact `(matched, n)` pair.
///
/// Comparisons cross-multiply, so `Accuracy` values with different `n` still
/// order correctly and no threshold is ever compared in floating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Accuracy {
    pub matched: u32,
    pub n: u32,
}

impl Accuracy {
    pub fn new(matched: u32, n: u32) -> Self {
        debug_assert!(n > 0 && matched <= n);
        Accuracy { matched, n }
    }

    pub fn as_f64(self) -> f64 {
        self.matched as f64 / self.n as f64
    }

    pub fn zero(n: u32) -> Self {
        Accuracy { matched: 0, n }
    }
}

impl PartialOrd for Accuracy {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Accuracy {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = self.matched as u64 * other.n as u64;
        let rhs = other.matched as u64 * self.n as u64;
        lhs.cmp(&rhs).then(self.n.cmp(&other.n))
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.matched, self.n)
    }
}

/// Fraction of positions where `a` and `b` agree.
pub fn bitwise_accuracy(a: &Watermark, b: &Watermark) -> Result<Accuracy> {
    let matched = a.matched(b)?;
    Ok(Accuracy::new(matched, a.len() as u32))
}
